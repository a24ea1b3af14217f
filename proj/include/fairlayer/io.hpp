#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairlayer/constraints.hpp"
#include "fairlayer/streaming.hpp"
#include "fairlayer/types.hpp"

namespace fairlayer {

/// Shortest text form that round-trips a double exactly (17 significant digits).
std::string format_g17(double x);

double parse_double(const std::string& s);
long parse_long(const std::string& s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

/// Flat key-value configuration text, grouped into [sections]. Repeated
/// section names are preserved in order; '#' starts a comment.
struct KVSection {
  std::string name;
  std::vector<std::pair<std::string, std::string>> entries;

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  long get_long(const std::string& key) const;
};

struct KVDocument {
  std::vector<KVSection> sections;

  static KVDocument parse(const std::string& text);
  static KVDocument load(const std::string& path);
  std::string serialize() const;

  const KVSection* find(const std::string& name) const;
  std::vector<const KVSection*> find_all(const std::string& name) const;
};

/// FairnessSpec list from [spec] sections:
///   kind = mean_parity | equalized_residuals | group_residual |
///          equalized_odds | box
///   epsilon = <double>, attribute = <name>
///   regions = lo:hi,lo:hi (equalized_odds), lower/upper (box)
std::vector<FairnessSpec<double>> parse_specs(const KVDocument& doc);
std::string serialize_specs(const std::vector<FairnessSpec<double>>& specs);

// Stream controller persistence: checkpoint document plus append-only log.
void save_controller(const DualControllerStateXd& state, const std::string& path);
DualControllerStateXd load_controller(const std::string& path);

std::string stream_log_header();
std::string stream_log_line(const StreamRecord<double>& rec);
void append_stream_log(const std::string& path, const std::vector<StreamRecord<double>>& records,
                       std::size_t from_index, bool write_header);

}  // namespace fairlayer

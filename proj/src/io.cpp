#include "fairlayer/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fairlayer/errors.hpp"

namespace fairlayer {

std::string format_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double parse_double(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || errno == ERANGE) throw IoError("cannot parse number '" + s + "'");
  return v;
}

long parse_long(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || errno == ERANGE) throw IoError("cannot parse integer '" + s + "'");
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("write to '" + path + "' failed");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

bool KVSection::has(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return true;
  return false;
}

const std::string& KVSection::get(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return v;
  throw IoError("missing key '" + key + "' in section [" + name + "]");
}

std::string KVSection::get_or(const std::string& key, const std::string& fallback) const {
  for (const auto& [k, v] : entries)
    if (k == key) return v;
  return fallback;
}

double KVSection::get_double(const std::string& key) const { return parse_double(get(key)); }
long KVSection::get_long(const std::string& key) const { return parse_long(get(key)); }

KVDocument KVDocument::parse(const std::string& text) {
  KVDocument doc;
  doc.sections.push_back({"", {}});  // implicit top section
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      doc.sections.push_back({trim(line.substr(1, line.size() - 2)), {}});
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed config line '" + line + "'");
    doc.sections.back().entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  if (doc.sections.front().entries.empty() && doc.sections.size() > 1)
    doc.sections.erase(doc.sections.begin());
  return doc;
}

KVDocument KVDocument::load(const std::string& path) { return parse(read_text_file(path)); }

std::string KVDocument::serialize() const {
  std::ostringstream out;
  for (const auto& sec : sections) {
    if (!sec.name.empty()) out << "[" << sec.name << "]\n";
    for (const auto& [k, v] : sec.entries) out << k << " = " << v << "\n";
  }
  return out.str();
}

const KVSection* KVDocument::find(const std::string& name) const {
  for (const auto& sec : sections)
    if (sec.name == name) return &sec;
  return nullptr;
}

std::vector<const KVSection*> KVDocument::find_all(const std::string& name) const {
  std::vector<const KVSection*> out;
  for (const auto& sec : sections)
    if (sec.name == name) out.push_back(&sec);
  return out;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find(sep, start);
    if (end == std::string::npos) end = s.size();
    out.push_back(trim(s.substr(start, end - start)));
    start = end + 1;
  }
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

}  // namespace

std::vector<FairnessSpec<double>> parse_specs(const KVDocument& doc) {
  std::vector<FairnessSpec<double>> specs;
  for (const KVSection* sec : doc.find_all("spec")) {
    const std::string kind = sec->get("kind");
    if (kind == "mean_parity") {
      specs.push_back(
          FairnessSpec<double>::mean_parity(sec->get("attribute"), sec->get_double("epsilon")));
    } else if (kind == "equalized_residuals") {
      specs.push_back(FairnessSpec<double>::equalized_residuals(sec->get("attribute"),
                                                                sec->get_double("epsilon")));
    } else if (kind == "group_residual") {
      specs.push_back(
          FairnessSpec<double>::group_residual(sec->get("attribute"), sec->get_double("epsilon")));
    } else if (kind == "equalized_odds") {
      std::vector<Interval<double>> regions;
      for (const auto& part : split(sec->get("regions"), ',')) {
        const auto bounds = split(part, ':');
        if (bounds.size() != 2) throw IoError("malformed region '" + part + "'");
        regions.push_back({parse_double(bounds[0]), parse_double(bounds[1])});
      }
      specs.push_back(FairnessSpec<double>::equalized_odds(sec->get("attribute"),
                                                           std::move(regions),
                                                           sec->get_double("epsilon")));
    } else if (kind == "box") {
      specs.push_back(
          FairnessSpec<double>::box(sec->get_double("lower"), sec->get_double("upper")));
    } else {
      throw IoError("unknown spec kind '" + kind + "'");
    }
  }
  return specs;
}

std::string serialize_specs(const std::vector<FairnessSpec<double>>& specs) {
  std::ostringstream out;
  for (const auto& s : specs) {
    out << "[spec]\n";
    out << "kind = " << to_string(s.kind) << "\n";
    if (s.kind == SpecKind::Box) {
      out << "lower = " << format_g17(s.lower) << "\n";
      out << "upper = " << format_g17(s.upper) << "\n";
    } else {
      out << "attribute = " << s.attribute << "\n";
      out << "epsilon = " << format_g17(s.epsilon) << "\n";
      if (s.kind == SpecKind::EqualizedOdds) {
        out << "regions = ";
        for (std::size_t r = 0; r < s.regions.size(); ++r) {
          if (r) out << ",";
          out << format_g17(s.regions[r].lo) << ":" << format_g17(s.regions[r].hi);
        }
        out << "\n";
      }
    }
  }
  return out.str();
}

void save_controller(const DualControllerStateXd& state, const std::string& path) {
  std::ostringstream out;
  out << "[dual_controller]\n";
  out << "version = 1\n";
  out << "lambda = " << format_g17(state.lambda) << "\n";
  out << "dual_updates = " << state.dual_updates << "\n";
  out << "eta = " << format_g17(state.eta) << "\n";
  out << "b_tau = " << state.b_tau << "\n";
  out << "epsilon = " << format_g17(state.epsilon) << "\n";
  out << "batches_seen = " << state.batches_seen << "\n";
  out << "total_samples = " << format_g17(state.total_samples) << "\n";
  out << "total_weighted_gap = " << format_g17(state.total_weighted_gap) << "\n";
  write_text_file(path, out.str());
}

DualControllerStateXd load_controller(const std::string& path) {
  const KVDocument doc = KVDocument::load(path);
  const KVSection* sec = doc.find("dual_controller");
  if (!sec) throw IoError("'" + path + "' is not a controller checkpoint");
  DualControllerStateXd state;
  state.lambda = sec->get_double("lambda");
  state.dual_updates = sec->get_long("dual_updates");
  state.eta = sec->get_double("eta");
  state.b_tau = sec->get_long("b_tau");
  state.epsilon = sec->get_double("epsilon");
  state.batches_seen = sec->get_long("batches_seen");
  state.total_samples = sec->get_double("total_samples");
  state.total_weighted_gap = sec->get_double("total_weighted_gap");
  return state;
}

std::string stream_log_header() {
  return "t,batch_size,branch,gap,weighted_violation,lambda,running_weighted_avg\n";
}

std::string stream_log_line(const StreamRecord<double>& rec) {
  std::ostringstream out;
  out << rec.batch_index << "," << rec.batch_size << "," << to_string(rec.branch) << ","
      << format_g17(rec.gap) << "," << format_g17(rec.weighted_violation) << ","
      << format_g17(rec.lambda_after) << "," << format_g17(rec.running_weighted_average) << "\n";
  return out.str();
}

void append_stream_log(const std::string& path, const std::vector<StreamRecord<double>>& records,
                       std::size_t from_index, bool write_header) {
  std::ofstream out(path, write_header ? (std::ios::binary | std::ios::trunc)
                                       : (std::ios::binary | std::ios::app));
  if (!out) throw IoError("cannot open '" + path + "' for stream log");
  if (write_header) out << stream_log_header();
  for (std::size_t i = from_index; i < records.size(); ++i) out << stream_log_line(records[i]);
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace fairlayer

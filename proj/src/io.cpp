#include "madl/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "madl/error.hpp"

namespace madl::io {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'D', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string where(const fs::path& path, std::size_t row, std::size_t col) {
  return path.string() + ": row " + std::to_string(row) + ", column " + std::to_string(col);
}

double parse_double(const std::string& s, const fs::path& path, std::size_t row, std::size_t col) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(where(path, row, col) + ": '" + s + "' is not a number");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

// Class columns: integers, 1-based in files, -1 for missing when allowed.
std::vector<int> read_classes(const fs::path& path, bool allow_missing, std::size_t& columns) {
  Table t = read_csv(path);
  columns = t.values.cols;
  std::vector<int> out(t.values.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = t.values.data[i];
    const std::size_t row = i / columns + 1;
    const std::size_t col = i % columns + 1;
    if (v != std::floor(v)) throw ParseError(where(path, row, col) + ": class must be an integer");
    const int k = static_cast<int>(v);
    if (k == -1 && allow_missing) {
      out[i] = kMissing;
    } else if (k >= 1) {
      out[i] = k - 1;
    } else {
      throw ParseError(where(path, row, col) + ": class " + std::to_string(k) + " outside 1..C");
    }
  }
  return out;
}

void write_classes(const fs::path& path, const std::vector<std::string>& header, std::span<const int> v,
                   std::size_t columns) {
  auto out = open_out(path);
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  for (std::size_t i = 0; i < v.size(); ++i) {
    out << (v[i] == kMissing ? -1 : v[i] + 1);
    out << ((i + 1) % columns == 0 ? "\n" : ",");
  }
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError(path.string() + ": truncated checkpoint");
  return v;
}

std::size_t kv_size(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ParseError("checkpoint metadata lacks '" + key + "'");
  return std::stoul(it->second);
}

double kv_double(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ParseError("checkpoint metadata lacks '" + key + "'");
  return std::stod(it->second);
}

const std::string& kv_str(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ParseError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace

std::vector<std::string> numbered_header(const std::string& prefix, std::size_t count) {
  std::vector<std::string> h(count);
  for (std::size_t i = 0; i < count; ++i) h[i] = prefix + std::to_string(i + 1);
  return h;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::string line;
  Table t;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  t.header = split(trim(line), ',');
  const std::size_t cols = t.header.size();
  std::size_t row = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto cells = split(trim(line), ',');
    if (cells.size() != cols) {
      throw ParseError(where(path, row, std::min(cells.size(), cols) + 1) + ": expected " +
                       std::to_string(cols) + " fields, found " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < cols; ++j) t.values.data.push_back(parse_double(cells[j], path, row, j + 1));
    ++rows;
  }
  t.values.rows = rows;
  t.values.cols = cols;
  return t;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header, const Matrix& values) {
  if (header.size() != values.cols) throw ShapeError("write_csv: header width differs from matrix");
  auto out = open_out(path);
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  for (std::size_t i = 0; i < values.rows; ++i) {
    for (std::size_t j = 0; j < values.cols; ++j) out << (j ? "," : "") << format_double(values(i, j));
    out << '\n';
  }
}

void write_annotators(const fs::path& path, const Matrix& features) {
  write_csv(path, numbered_header("a", features.cols), features);
}

Matrix read_annotators(const fs::path& path) { return read_csv(path).values; }

void write_dataset(const fs::path& dir, const Dataset& data) {
  data.validate();
  fs::create_directories(dir);
  write_csv(dir / "instances.csv", numbered_header("x", data.x.cols), data.x);
  if (data.has_labels()) write_classes(dir / "labels.csv", {"y"}, data.y, 1);
  const auto zh = numbered_header("z", data.num_annotators);
  if (data.num_annotators > 0) {
    write_classes(dir / "annotations.csv", zh, data.z, data.num_annotators);
    if (!data.z_full.empty()) write_classes(dir / "annotations_full.csv", zh, data.z_full, data.num_annotators);
  }
  nlohmann::json meta{{"num_classes", data.num_classes},
                      {"num_instances", data.size()},
                      {"num_annotators", data.num_annotators}};
  open_out(dir / "dataset.json") << meta.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& dir) {
  Dataset d;
  d.x = read_csv(dir / "instances.csv").values;
  std::size_t cols = 0;
  if (fs::exists(dir / "labels.csv")) {
    d.y = read_classes(dir / "labels.csv", false, cols);
    if (cols != 1) throw ParseError((dir / "labels.csv").string() + ": expected a single column y");
  }
  if (fs::exists(dir / "annotations.csv")) {
    d.z = read_classes(dir / "annotations.csv", true, cols);
    d.num_annotators = cols;
  }
  if (fs::exists(dir / "annotations_full.csv")) {
    d.z_full = read_classes(dir / "annotations_full.csv", true, cols);
    if (cols != d.num_annotators) throw ParseError("annotations_full.csv: column count differs from annotations.csv");
  }
  if (fs::exists(dir / "dataset.json")) {
    std::ifstream in(dir / "dataset.json");
    d.num_classes = nlohmann::json::parse(in).at("num_classes").get<std::size_t>();
  } else {
    int top = 0;
    for (int v : d.y) top = std::max(top, v);
    for (int v : d.z) top = std::max(top, v);
    d.num_classes = static_cast<std::size_t>(top) + 1;
  }
  d.validate();
  return d;
}

Dataset read_letter(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  Dataset d;
  d.num_classes = 26;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != 17) {
      throw ParseError(where(path, row, 1) + ": expected 17 fields, found " + std::to_string(cells.size()));
    }
    if (cells[0].size() != 1 || cells[0][0] < 'A' || cells[0][0] > 'Z') {
      throw ParseError(where(path, row, 1) + ": expected a letter A-Z");
    }
    d.y.push_back(cells[0][0] - 'A');
    for (std::size_t j = 1; j < cells.size(); ++j) d.x.data.push_back(parse_double(cells[j], path, row, j + 1) / 15.0);
  }
  d.x.rows = d.y.size();
  d.x.cols = 16;
  return d;
}

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source + ": line " + std::to_string(row) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(source + ": line " + std::to_string(row) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

KeyValues model_spec_to_kv(const ModelSpec& spec) {
  const auto& ap = spec.ap;
  return {{"model.input_dim", std::to_string(spec.input_dim)},
          {"model.num_classes", std::to_string(spec.num_classes)},
          {"model.annotator_dim", std::to_string(spec.annotator_dim)},
          {"model.gt_hidden", std::to_string(spec.gt_hidden)},
          {"ap.class_dependency", to_string(ap.class_dependency)},
          {"ap.instance_dependent", ap.instance_dependent ? "true" : "false"},
          {"ap.annotator_embed_size", std::to_string(ap.annotator_embed_size)},
          {"ap.instance_embed_size", std::to_string(ap.instance_embed_size)},
          {"ap.outer_size", std::to_string(ap.outer_size)},
          {"ap.residual_hidden", std::to_string(ap.residual_hidden)},
          {"ap.eta", format_double(ap.eta)},
          {"ap.outer_product", ap.outer_product ? "true" : "false"},
          {"ap.residual", ap.residual ? "true" : "false"},
          {"ap.instance_source", to_string(ap.instance_source)},
          {"kernel.alpha", format_double(spec.kernel.alpha)},
          {"kernel.beta", format_double(spec.kernel.beta)}};
}

ModelSpec model_spec_from_kv(const KeyValues& kv) {
  ModelSpec s;
  s.input_dim = kv_size(kv, "model.input_dim");
  s.num_classes = kv_size(kv, "model.num_classes");
  s.annotator_dim = kv_size(kv, "model.annotator_dim");
  s.gt_hidden = kv_size(kv, "model.gt_hidden");
  s.ap.class_dependency = parse_class_dependency(kv_str(kv, "ap.class_dependency"));
  s.ap.instance_dependent = kv_str(kv, "ap.instance_dependent") == "true";
  s.ap.annotator_embed_size = kv_size(kv, "ap.annotator_embed_size");
  s.ap.instance_embed_size = kv_size(kv, "ap.instance_embed_size");
  s.ap.outer_size = kv_size(kv, "ap.outer_size");
  s.ap.residual_hidden = kv_size(kv, "ap.residual_hidden");
  s.ap.eta = kv_double(kv, "ap.eta");
  s.ap.outer_product = kv_str(kv, "ap.outer_product") == "true";
  s.ap.residual = kv_str(kv, "ap.residual") == "true";
  s.ap.instance_source = parse_instance_source(kv_str(kv, "ap.instance_source"));
  s.kernel.alpha = kv_double(kv, "kernel.alpha");
  s.kernel.beta = kv_double(kv, "kernel.beta");
  return s;
}

void save_checkpoint(const fs::path& path, const MadlModel& model, const KeyValues& extra) {
  KeyValues meta = extra;
  for (auto& [k, v] : model_spec_to_kv(model.spec())) meta[k] = v;
  const std::string text = format_key_values(meta);
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& items = model.params().items();
  put<std::uint64_t>(out, items.size());
  for (const auto& p : items) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.tensor.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(out, d);
    auto v = p.tensor.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw ConfigError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError(path.string() + ": not a checkpoint");
  if (get<std::uint32_t>(in, path) != kVersion) throw ParseError(path.string() + ": unsupported version");
  std::string text(get<std::uint64_t>(in, path), '\0');
  in.read(text.data(), static_cast<std::streamsize>(text.size()));
  KeyValues meta = parse_key_values(text, path.string());
  MadlModel model = MadlModel::create(model_spec_from_kv(meta), 0);
  const auto count = get<std::uint64_t>(in, path);
  if (count != model.params().items().size()) throw ParseError(path.string() + ": parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto* param = model.params().find(name);
    if (param == nullptr) throw ParseError(path.string() + ": unknown parameter '" + name + "'");
    diffnet::Shape shape(get<std::uint32_t>(in, path));
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    if (shape != param->tensor.shape()) throw ParseError(path.string() + ": shape mismatch for '" + name + "'");
    Tensor t = param->tensor;
    auto v = t.mutable_values();
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw ParseError(path.string() + ": truncated checkpoint");
  }
  return Checkpoint{std::move(model), std::move(meta)};
}

}  // namespace madl::io

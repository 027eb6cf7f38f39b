#include "maoml/tasks/dataset_io.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "maoml/error.hpp"

namespace maoml::tasks {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestHeader = "task_id,class_index,class_name,split,sample_index,byte_offset,length";

void write_atomic(const fs::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

json spec_to_json(const TaskSpec& s) {
  return {{"task_id", s.task_id},
          {"base_pattern_seed", s.base_pattern_seed},
          {"degradation_direction", s.degradation_direction},
          {"noise_scale", s.noise_scale},
          {"class_count", s.class_count},
          {"image_side", s.image_side},
          {"base_amplitude", s.base_amplitude},
          {"degradation_offset", s.degradation_offset}};
}

TaskSpec spec_from_json(const json& j) {
  TaskSpec s;
  s.task_id = j.at("task_id").get<std::string>();
  s.base_pattern_seed = j.at("base_pattern_seed").get<std::uint64_t>();
  s.degradation_direction = j.at("degradation_direction").get<std::vector<double>>();
  s.noise_scale = j.at("noise_scale").get<double>();
  s.class_count = j.at("class_count").get<std::size_t>();
  s.image_side = j.at("image_side").get<std::size_t>();
  s.base_amplitude = j.at("base_amplitude").get<double>();
  s.degradation_offset = j.value("degradation_offset", 0.0);
  return s;
}

struct ManifestRow {
  std::string task_id;
  std::size_t class_index = 0;
  Split split = Split::train;
  std::size_t sample_index = 0;
  std::size_t byte_offset = 0;
  std::size_t length = 0;
  std::size_t line_offset = 0;
};

std::size_t parse_size(const std::string& field, const char* name, std::size_t at) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty())
    throw ParseError(std::string("manifest: bad ") + name + " '" + field + "'", at);
  return v;
}

std::vector<ManifestRow> parse_manifest(const std::string& text) {
  std::vector<ManifestRow> rows;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    const std::size_t line_start = pos;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) throw ParseError("manifest: missing trailing newline (truncated?)", line_start);
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      if (line != kManifestHeader) throw ParseError("manifest: unexpected header", line_start);
      header = false;
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 7)
      throw ParseError("manifest: expected 7 columns, got " + std::to_string(fields.size()), line_start);
    ManifestRow r;
    r.line_offset = line_start;
    r.task_id = fields[0];
    r.class_index = parse_size(fields[1], "class_index", line_start);
    try {
      r.split = split_from_string(fields[3]);
    } catch (const ValidationError&) {
      throw ParseError("manifest: bad split '" + fields[3] + "'", line_start);
    }
    r.sample_index = parse_size(fields[4], "sample_index", line_start);
    r.byte_offset = parse_size(fields[5], "byte_offset", line_start);
    r.length = parse_size(fields[6], "length", line_start);
    rows.push_back(std::move(r));
  }
  if (header) throw ParseError("manifest: empty file", 0);
  return rows;
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f64(const std::string& in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t{static_cast<unsigned char>(in[at + i])} << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_dataset(const fs::path& root, std::span<const TaskDataset> tasks) {
  fs::create_directories(root);
  std::string manifest = std::string(kManifestHeader) + "\n";
  std::string tensors;
  json specs = json::array();
  for (const auto& task : tasks) {
    specs.push_back(spec_to_json(task.spec));
    const auto scale = ordinal::OrdinalScale::for_classes(task.spec.class_count);
    for (const auto* split : {&task.train, &task.test})
      for (const auto& ex : *split) {
        const std::size_t offset = tensors.size();
        for (double v : ex.image.data()) put_f64(tensors, v);
        manifest += task.spec.task_id + "," + std::to_string(ex.label.index) + "," + scale.name(ex.label) + "," +
                    to_string(ex.split) + "," + std::to_string(ex.sample_index) + "," + std::to_string(offset) + "," +
                    std::to_string(tensors.size() - offset) + "\n";
      }
  }
  write_atomic(root / "tensors.bin", tensors);
  write_atomic(root / "tasks.json", json{{"format", "maoml-tasks-v1"}, {"tasks", specs}}.dump(1) + "\n");
  write_atomic(root / "manifest.csv", manifest);
}

std::vector<TaskDataset> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
  const std::string spec_text = read_file(root / "tasks.json");
  std::vector<TaskDataset> out;
  std::map<std::string, std::size_t> by_id;
  try {
    const json doc = json::parse(spec_text);
    for (const auto& j : doc.at("tasks")) {
      TaskDataset ds;
      ds.spec = spec_from_json(j);
      ds.spec.validate();
      by_id[ds.spec.task_id] = out.size();
      out.push_back(std::move(ds));
    }
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("tasks.json: ") + e.what(), e.byte);
  } catch (const json::exception& e) {
    throw ParseError(std::string("tasks.json: ") + e.what(), 0);
  } catch (const ValidationError& e) {
    throw ParseError(std::string("tasks.json: ") + e.what(), 0);
  }

  const auto rows = parse_manifest(read_file(root / "manifest.csv"));
  const std::string tensors = read_file(root / "tensors.bin");
  for (const auto& r : rows) {
    auto it = by_id.find(r.task_id);
    if (it == by_id.end()) throw ParseError("manifest: unknown task '" + r.task_id + "'", r.line_offset);
    auto& ds = out[it->second];
    const std::size_t pixels = ds.spec.pixel_count();
    if (r.class_index >= ds.spec.class_count) throw ParseError("manifest: class index out of range", r.line_offset);
    if (r.length != pixels * sizeof(double))
      throw ParseError("manifest: image length " + std::to_string(r.length) + " does not match image side",
                       r.line_offset);
    if (r.byte_offset + r.length > tensors.size())
      throw ParseError("tensors.bin truncated: row needs bytes up to " + std::to_string(r.byte_offset + r.length),
                       tensors.size());
    ad::Tensor img({pixels});
    for (std::size_t p = 0; p < pixels; ++p) img[p] = get_f64(tensors, r.byte_offset + p * sizeof(double));
    Example ex{std::move(img), {r.class_index}, r.split, r.sample_index};
    (r.split == Split::train ? ds.train : ds.test).push_back(std::move(ex));
  }
  return out;
}

}  // namespace maoml::tasks

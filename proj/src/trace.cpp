#include "dwm/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dwm/errors.hpp"

namespace dwm {

namespace {

nlohmann::json as_rows(const std::vector<double>& flat, std::size_t rows, std::size_t cols) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t r = 0; r < rows; ++r) {
    out.push_back(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                      flat.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols)));
  }
  return out;
}

std::vector<double> from_rows(const nlohmann::json& rows) {
  std::vector<double> flat;
  for (const auto& r : rows)
    for (const auto& v : r) flat.push_back(v.get<double>());
  return flat;
}

}  // namespace

void write_trace(const EpisodeTrace& trace, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << nlohmann::json{{"type", "header"},
                        {"num_addresses", trace.num_addresses},
                        {"word_width", trace.word_width},
                        {"steps", trace.steps.size()},
                        {"metadata", trace.metadata}}
             .dump()
      << '\n';
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const TraceStep& s = trace.steps[t];
    nlohmann::json j{{"type", "step"},
                     {"t", t},
                     {"attention", s.attention},
                     {"bookmarks", s.bookmarks},
                     {"shift", s.shift},
                     {"bookmark_gates", s.bookmark_gates},
                     {"attention_gates", s.attention_gates},
                     {"sharpening", s.sharpening},
                     {"erase", s.erase},
                     {"add", s.add},
                     {"read", s.read},
                     {"output", s.output}};
    if (s.memory) j["memory"] = as_rows(*s.memory, trace.word_width, trace.num_addresses);
    out << j.dump() << '\n';
  }
  out << nlohmann::json{{"type", "final"}, {"memory", as_rows(trace.final_memory, trace.word_width, trace.num_addresses)}}
             .dump()
      << '\n';
}

EpisodeTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace " + path.string());
  EpisodeTrace trace;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type != "header" && !have_header) {
        throw ConfigError("trace " + path.string() + " does not start with a header");
      }
      if (type == "header") {
        trace.num_addresses = j.at("num_addresses").get<std::size_t>();
        trace.word_width = j.at("word_width").get<std::size_t>();
        trace.metadata = j.value("metadata", nlohmann::json::object());
        have_header = true;
      } else if (type == "step") {
        TraceStep s;
        s.attention = j.at("attention").get<std::vector<double>>();
        s.bookmarks = j.at("bookmarks").get<std::vector<std::vector<double>>>();
        s.shift = j.at("shift").get<std::vector<double>>();
        s.bookmark_gates = j.at("bookmark_gates").get<std::vector<double>>();
        s.attention_gates = j.at("attention_gates").get<std::vector<double>>();
        s.sharpening = j.at("sharpening").get<double>();
        s.erase = j.at("erase").get<std::vector<double>>();
        s.add = j.at("add").get<std::vector<double>>();
        s.read = j.at("read").get<std::vector<double>>();
        s.output = j.at("output").get<std::vector<double>>();
        if (j.contains("memory")) s.memory = from_rows(j["memory"]);
        trace.steps.push_back(std::move(s));
      } else if (type == "final") {
        trace.final_memory = from_rows(j.at("memory"));
      } else {
        throw ConfigError("trace " + path.string() + ": unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("trace " + path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw ConfigError("trace " + path.string() + " has no header line");
  return trace;
}

// ---------------------------------------------------------------------------

namespace {

// Builds a rows x cols grid of raw values; columns are timesteps.
std::vector<std::vector<double>> time_series(const EpisodeTrace& trace,
                                             const std::vector<double>& (*pick)(const TraceStep&)) {
  std::vector<std::vector<double>> cols;
  cols.reserve(trace.steps.size());
  for (const auto& s : trace.steps) cols.push_back(pick(s));
  return cols;
}

GrayImage normalize(const std::vector<std::vector<double>>& columns) {
  GrayImage img;
  img.width = columns.size();
  img.height = columns.empty() ? 0 : columns.front().size();
  img.pixels.assign(img.width * img.height, 128);
  double lo = INFINITY;
  double hi = -INFINITY;
  for (const auto& c : columns) {
    if (c.size() != img.height) throw ContractError("heatmap: ragged field");
    for (double v : c) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) return img;
  for (std::size_t x = 0; x < img.width; ++x) {
    for (std::size_t y = 0; y < img.height; ++y) {
      const double u = (columns[x][y] - lo) / (hi - lo);
      img.pixels[y * img.width + x] = static_cast<unsigned char>(std::lround(255.0 * u));
    }
  }
  return img;
}

}  // namespace

GrayImage heatmap(const EpisodeTrace& trace, const std::string& field) {
  using Picker = const std::vector<double>& (*)(const TraceStep&);
  static const std::pair<const char*, Picker> kSeries[] = {
      {"attention", [](const TraceStep& s) -> const std::vector<double>& { return s.attention; }},
      {"shift", [](const TraceStep& s) -> const std::vector<double>& { return s.shift; }},
      {"bookmark_gates", [](const TraceStep& s) -> const std::vector<double>& { return s.bookmark_gates; }},
      {"attention_gates", [](const TraceStep& s) -> const std::vector<double>& { return s.attention_gates; }},
      {"erase", [](const TraceStep& s) -> const std::vector<double>& { return s.erase; }},
      {"add", [](const TraceStep& s) -> const std::vector<double>& { return s.add; }},
      {"read", [](const TraceStep& s) -> const std::vector<double>& { return s.read; }},
      {"output", [](const TraceStep& s) -> const std::vector<double>& { return s.output; }},
  };
  for (const auto& [name, pick] : kSeries)
    if (field == name) return normalize(time_series(trace, pick));

  if (field == "sharpening") {
    std::vector<std::vector<double>> cols;
    for (const auto& s : trace.steps) cols.push_back({s.sharpening});
    return normalize(cols);
  }
  if (field.rfind("bookmark", 0) == 0 && field.size() > 8 && field.find_first_not_of("0123456789", 8) == std::string::npos) {
    const std::size_t index = std::stoul(field.substr(8));
    std::vector<std::vector<double>> cols;
    for (const auto& s : trace.steps) {
      if (index >= s.bookmarks.size()) throw ConfigError("heatmap: no bookmark " + std::to_string(index));
      cols.push_back(s.bookmarks[index]);
    }
    return normalize(cols);
  }
  if (field == "memory") {
    // Rows = bits, columns = addresses.
    std::vector<std::vector<double>> cols(trace.num_addresses, std::vector<double>(trace.word_width));
    for (std::size_t a = 0; a < trace.num_addresses; ++a)
      for (std::size_t b = 0; b < trace.word_width; ++b) cols[a][b] = trace.final_memory[b * trace.num_addresses + a];
    return normalize(cols);
  }
  throw ConfigError("heatmap: unknown field '" + field + "'");
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (!in || magic != "P5" || maxval != 255) throw ConfigError("not an 8-bit binary PGM: " + path.string());
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  return img;
}

void render_heatmap(const std::filesystem::path& trace_file, const std::string& field,
                    const std::filesystem::path& image_file) {
  write_pgm(heatmap(read_trace(trace_file), field), image_file);
}

}  // namespace dwm

#pragma once

// Per-timestep record of the memory model's internals, its line-delimited
// JSON serialization, and grayscale heatmap rendering.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dwm {

struct TraceStep {
  std::vector<double> attention;               // w_t
  std::vector<std::vector<double>> bookmarks;  // B_t^i, [0] static
  std::vector<double> shift;
  std::vector<double> bookmark_gates;
  std::vector<double> attention_gates;
  double sharpening = 1.0;
  std::vector<double> erase;
  std::vector<double> add;
  std::vector<double> read;    // r_{t-1}
  std::vector<double> output;  // sigmoid(y_t)
  // word_width x A, row-major; present only when per-step snapshots are on.
  std::optional<std::vector<double>> memory;

  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

struct EpisodeTrace {
  std::size_t num_addresses = 0;
  std::size_t word_width = 0;
  std::vector<TraceStep> steps;
  std::vector<double> final_memory;  // word_width x A, row-major
  nlohmann::json metadata = nlohmann::json::object();

  friend bool operator==(const EpisodeTrace& a, const EpisodeTrace& b) {
    return a.num_addresses == b.num_addresses && a.word_width == b.word_width && a.steps == b.steps &&
           a.final_memory == b.final_memory && a.metadata == b.metadata;
  }
};

// Line 1: {"type":"header",...}; one {"type":"step",...} line per timestep;
// last line {"type":"final","memory":[[...]...]}.
void write_trace(const EpisodeTrace& trace, const std::filesystem::path& path);
EpisodeTrace read_trace(const std::filesystem::path& path);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<unsigned char> pixels;  // row-major
};

// Fields: attention, bookmark<i> (e.g. bookmark0), shift, bookmark_gates,
// attention_gates, sharpening, erase, add, read, output (rows = components,
// columns = time), memory (final snapshot, rows = bits, columns = addresses).
// Values are min-max normalized per image; a constant field maps to 128.
// Throws ConfigError on an unknown field.
GrayImage heatmap(const EpisodeTrace& trace, const std::string& field);

// Binary PGM (P5).
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

void render_heatmap(const std::filesystem::path& trace_file, const std::string& field,
                    const std::filesystem::path& image_file);

}  // namespace dwm

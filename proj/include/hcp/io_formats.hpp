#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hcp/core.hpp"
#include "hcp/error.hpp"
#include "hcp/metrics.hpp"
#include "hcp/scene_synth.hpp"

// File formats. Every reader failure is an IoError with a specific code.
//
// Frame (.hcpf), little-endian: "HCPF", u16 version, u32 point count N, then
// N records of f32 x, y, z, r. Total length is exactly 10 + 16 N bytes.
//
// Annotations (.ann.json), predictions (.pred.json), metric reports and scene
// manifests are UTF-8 JSON objects tagged with "schema" and "version".
namespace hcp::io {

namespace fs = std::filesystem;

inline constexpr std::uint16_t kFrameVersion = 1;
inline constexpr int kSchemaVersion = 1;

std::string encode_frame(const PointCloud& cloud);
PointCloud decode_frame(std::string_view bytes);
void write_frame(const fs::path& path, const PointCloud& cloud);
PointCloud read_frame(const fs::path& path);

// Labels and instances of `frame`; its cloud supplies the point count.
std::string encode_annotations(const SceneFrame& frame);
// Returns `cloud` with the decoded annotations attached. Indices and label
// count are checked against the cloud size.
SceneFrame decode_annotations(std::string_view text, PointCloud cloud);
// Also requires every frame invariant under `taxonomy`; violations raise
// IoError(kInvalidValue) naming the first one.
SceneFrame decode_annotations(std::string_view text, PointCloud cloud, const SemanticTaxonomy& taxonomy);
void write_annotations(const fs::path& path, const SceneFrame& frame);
SceneFrame read_annotations(const fs::path& path, PointCloud cloud);

std::string encode_predictions(const FramePrediction& prediction, std::size_t point_count);
FramePrediction decode_predictions(std::string_view text, std::size_t point_count);
void write_predictions(const fs::path& path, const FramePrediction& prediction, std::size_t point_count);
FramePrediction read_predictions(const fs::path& path, std::size_t point_count);

std::string encode_reports(const std::vector<metrics::MetricReport>& reports);
std::vector<metrics::MetricReport> decode_reports(std::string_view text);

std::string encode_manifest(const synth::SceneManifest& manifest);
synth::SceneManifest decode_manifest(std::string_view text);

// Dataset directory layout: <id>.hcpf, <id>.ann.json and optionally
// <id>.manifest.json per frame.
void save_scene(const fs::path& dir, const SceneFrame& frame);
SceneFrame load_scene(const fs::path& dir, const std::string& frame_id);
SceneFrame load_scene(const fs::path& dir, const std::string& frame_id, const SemanticTaxonomy& taxonomy);
// Frame ids of every .hcpf file in `dir`, sorted.
std::vector<std::string> list_frames(const fs::path& dir);

fs::path frame_path(const fs::path& dir, const std::string& frame_id);
fs::path annotation_path(const fs::path& dir, const std::string& frame_id);
fs::path prediction_path(const fs::path& dir, const std::string& frame_id);
fs::path manifest_path(const fs::path& dir, const std::string& frame_id);

// Text helpers on top of the binary file helpers.
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);

}  // namespace hcp::io

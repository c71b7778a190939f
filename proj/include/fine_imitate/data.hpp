#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fine_imitate/geometry.hpp"
#include "fine_imitate/tensor.hpp"

namespace fi::data {

using geometry::Box;

inline const std::vector<std::string> kShapeClasses{"circle", "square", "triangle"};

struct Sample {
  numerics::Tensor image;  // {W, H, 1}, values in [0, 1]
  std::vector<Box> gts;
  std::string image_id;
};

/// Annotation-only view of a sample; pixels are read on demand.
struct SampleMeta {
  std::string image_id;
  std::filesystem::path image_path;
  std::vector<Box> gts;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

/// Synthetic shapes scene generator. Objects (filled circles, squares and
/// upward triangles) sit on a noisy background with distractor strokes; a
/// `crowding` fraction of objects is placed overlapping an earlier one.
struct DatasetSpec {
  std::uint64_t seed = 1;
  std::size_t num_images = 100;
  std::size_t image_size = 64;
  std::size_t stride = 8;  // detector stride the image size must divide
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  double min_size = 12.0;
  double max_size = 28.0;
  double crowding = 0.3;
  double noise_std = 0.04;
  std::size_t max_clutter = 6;  // distractor strokes per image
  double texture = 0.0;          // std of a smooth random background texture; objects are drawn over it
  double texture_sigma = 1.5;    // texture smoothing length in pixels
  std::size_t max_retries = 50;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

void validate(const DatasetSpec& spec);
nlohmann::json to_json(const DatasetSpec& spec);
/// Unknown keys are rejected.
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

/// Fully determined by `spec`; image n draws from a stream seeded by
/// (spec.seed, n), so any subset can be regenerated independently.
std::vector<Sample> generate(const DatasetSpec& spec);
Sample generate_one(const DatasetSpec& spec, std::size_t index);

// --- JSON lines annotations -------------------------------------------------
// One object per line: {"image": "<path>", "boxes": [[x1, y1, x2, y2, class_id], ...]}
// plus an optional "image_id". Relative image paths resolve against the file's
// directory.

std::vector<SampleMeta> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const std::vector<SampleMeta>& samples);

/// Writes images/<id>.png and annotations.jsonl under `dir`.
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
/// Loads annotations.jsonl under `dir` and reads every image.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);
Sample load_sample(const SampleMeta& meta);

// --- KITTI ------------------------------------------------------------------

/// Reads every *.txt label file in `dir` (sorted by name). Only objects whose
/// type matches `classes` (case-insensitive) are kept; class_id is the index
/// into `classes`. Image paths point at ../image_2/<stem>.png.
std::vector<SampleMeta> load_kitti_labels(const std::filesystem::path& dir,
                                          const std::vector<std::string>& classes = {"car", "pedestrian",
                                                                                     "cyclist"});

/// KITTI label line with the given type and 2-D box; 3-D fields are zero.
std::string format_kitti_line(const std::string& type, const Box& box);

}  // namespace fi::data

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wsovod/geometry.hpp"

namespace wsovod {

struct Image {
  std::size_t h = 0, w = 0;
  std::vector<double> data;  // h*w*3 row-major, values in [0,1]

  Image() = default;
  Image(std::size_t h_, std::size_t w_) : h(h_), w(w_), data(h_ * w_ * 3, 0.0) {}
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * w + x) * 3 + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * w + x) * 3 + c];
  }
};

struct CategorySpec {
  std::string name;
  std::array<double, 3> appearance{};  // base color
  int texture = 0;                     // pattern selector
  bool is_novel = false;
  // novel categories only: weights over base category indices, summing to 1
  std::vector<std::pair<std::size_t, double>> mixture;
};

using Vocabulary = std::vector<CategorySpec>;

// 8 base + 2 mixture-defined novel categories.
Vocabulary default_vocabulary();
Vocabulary load_vocabulary(const std::string& path);
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
std::string vocabulary_to_json(const Vocabulary& vocab);
Vocabulary vocabulary_from_json(const std::string& text);
std::vector<std::size_t> base_category_ids(const Vocabulary& vocab);
std::vector<std::size_t> novel_category_ids(const Vocabulary& vocab);

struct ObjectInstance {
  Box box;
  std::size_t category = 0;
  std::array<double, 3> jitter{};  // each component in [-0.1, 0.1]
};

struct BiasProfile {
  std::string name;
  int min_objects = 1, max_objects = 1;
  double min_scale = 0.4, max_scale = 0.7;  // fraction of image side
  enum class Placement { kCentered, kUniform } placement = Placement::kCentered;
  double brightness = 0.15;
  double clutter_density = 0.0;  // expected clutter rectangles per image
};

BiasProfile object_centric_profile();
BiasProfile scene_centric_profile();
BiasProfile profile_by_name(const std::string& name);

struct Scene {
  std::size_t h = 64, w = 64;
  std::vector<ObjectInstance> objects;
  int dataset_id = 0;
  double brightness = 0.15;
  double clutter_density = 0.0;
  std::uint64_t seed = 0;  // drives render-time noise
};

struct LabelPolicy {
  bool federated = false;
  double p_keep = 1.0;
};

struct ImageRecord {
  Image image;
  std::vector<std::size_t> labels;  // present category ids (sorted)
  int dataset_id = 0;
  std::vector<ObjectInstance> gt;  // hidden ground truth, eval/oracle only
};

// Deterministic in (profile, allowed categories, seed). Objects are pairwise
// IoU <= 0.3; placement failures just drop the object.
Scene gen_scene(const BiasProfile& profile, const Vocabulary& vocab,
                const std::vector<std::size_t>& allowed_categories,
                std::uint64_t seed, std::size_t image_size = 64);

Image render(const Scene& scene, const Vocabulary& vocab);

// Image-level labels. Federated keeps each present category with prob p_keep
// but never drops the last one.
std::vector<std::size_t> label_image(const Scene& scene, const LabelPolicy& policy,
                                     std::uint64_t seed);

struct DatasetGenConfig {
  BiasProfile profile;
  std::vector<std::size_t> allowed_categories;
  std::size_t num_images = 100;
  LabelPolicy labels;
  std::uint64_t seed = 42;
  int dataset_id = 0;
  std::size_t image_size = 64;
};

std::vector<ImageRecord> make_dataset(const DatasetGenConfig& cfg,
                                      const Vocabulary& vocab);

// Line-delimited JSON; images inline or as sibling little-endian f32 files.
void write_dataset(const std::string& path, const std::vector<ImageRecord>& records,
                   bool inline_images = false);
std::vector<ImageRecord> read_dataset(const std::string& path);

}  // namespace wsovod

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "protoseg/tensor.hpp"

namespace protoseg {

using Image = Tensor<float>;  // H x W x 1
using Mask = Tensor<float>;   // H x W x 1, values in {0, 1} unless noted soft

struct ImageSample {
  std::string sample_id;
  Image image;                  // intensities in [0, 1]
  std::map<int, Mask> masks;    // class id -> binary mask; keys are the present classes
};

struct Dataset {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<ImageSample> samples;

  const ImageSample& find(const std::string& id) const;
  std::vector<std::size_t> indices_with_class(int class_id) const;
};

struct SupportItem {
  std::string sample_id;
  Image image;
  Mask mask;
};

struct Episode {
  std::vector<SupportItem> support;
  std::string query_id;
  Image query_image;
  std::optional<Mask> query_mask;
  int class_id = 0;
};

// Maps support pixel coordinates (x = column, y = row) into query coordinates:
// [x_q, y_q] = linear * [x_s, y_s] + translation.
struct AffineTransform {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};  // row-major 2 x 3

  static AffineTransform identity() { return {}; }
  double determinant() const { return m[0] * m[4] - m[1] * m[3]; }
  std::array<double, 2> translation() const { return {m[2], m[5]}; }
  std::array<double, 2> apply(double x, double y) const;
  AffineTransform inverse() const;
};

struct AlignResult {
  Image image;
  Mask mask;
  AffineTransform transform;
  bool collapsed = false;  // every mask pixel left the frame; mask fell back to the input
};

struct GeneratorConfig {
  int num_images = 200;
  int size = 64;
  int num_classes = 4;
  std::uint64_t seed = 1;
};

// One instance of every class per image on a noisy background. Class c uses
// shape family c % 4 (ellipse, rotated rectangle, ring, triangle) and its own
// intensity band.
Dataset generate_synthetic(const GeneratorConfig& config);

float class_intensity(int class_id, int num_classes);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, bool write_pgm = false);
Dataset load_dataset(const std::filesystem::path& dir);

// Binary P5 export of a map whose values lie in [0, 1].
void write_pgm(const Tensor<float>& map, const std::filesystem::path& path);

// K supports of `class_id`, drawn uniformly without replacement from samples
// other than `exclude_index`. With `fixed_support_id` the first support is
// always that sample.
std::vector<std::size_t> sample_support_indices(const Dataset& dataset, int class_id, int k,
                                                std::optional<std::size_t> exclude_index, std::mt19937_64& rng,
                                                const std::optional<std::string>& fixed_support_id = std::nullopt);

Episode make_episode(const Dataset& dataset, int class_id, std::size_t query_index,
                     const std::vector<std::size_t>& support_indices);

// Uniform query, then supports as above. Throws InsufficientDataError when
// fewer than K + 1 samples carry the class.
Episode sample_episode(const Dataset& dataset, int class_id, int k, std::mt19937_64& rng,
                       const std::optional<std::string>& fixed_support_id = std::nullopt);

// Intensity-moment registration of the support onto the query.
AlignResult affine_align(const Image& support_image, const Mask& support_mask, const Image& query_image);

enum class InitMode { kUnion, kAverage };

Mask initial_mask(const std::vector<Mask>& aligned_masks, InitMode mode = InitMode::kUnion);

// Block average; result is a soft mask in [0, 1].
Mask downsample_mask(const Mask& mask, int factor);

// >= 0.5 -> 1 (ties go to foreground).
Mask binarize(const Mask& soft);

std::vector<int> training_classes(int num_classes, int holdout_class);

// Copy of `dataset` in which every pixel of `class_id` is repainted as
// background (a plane fitted to the unlabeled pixels plus Gaussian noise of
// the residual spread) and the class masks are dropped.
Dataset remove_class(const Dataset& dataset, int class_id, std::uint64_t seed);

}  // namespace protoseg

#pragma once

// Procedural face stimuli with two binary reward-relevant attributes (glasses,
// hat) plus nuisance variation, and PGM/manifest import and export.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlbvae/numerics.hpp"
#include "rlbvae/rng.hpp"

namespace rlbvae {

enum class Category : int { neither = 0, glasses = 1, hat = 2, both = 3 };

inline constexpr std::array<Category, 4> kAllCategories = {
    Category::neither, Category::glasses, Category::hat, Category::both};

const char* category_name(Category c);
Category category_from_name(const std::string& name);

struct Attributes {
  bool glasses = false;
  bool hat = false;

  Category category() const {
    return static_cast<Category>((glasses ? 1 : 0) + (hat ? 2 : 0));
  }
  static Attributes from(Category c) {
    const int v = static_cast<int>(c);
    return {(v & 1) != 0, (v & 2) != 0};
  }
  friend bool operator==(const Attributes&, const Attributes&) = default;
};

// Points earned for choosing a face: 25 per glasses, 50 per hat.
double reward_of(Attributes attrs);

// Grayscale image, pixels in [0, 1], stored row-major (index y * width + x).
struct Image {
  int width = 0;
  int height = 0;
  Vector pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(Vector::Zero(Eigen::Index(w) * h)) {}

  double& at(int x, int y) { return pixels[Eigen::Index(y) * width + x]; }
  double at(int x, int y) const { return pixels[Eigen::Index(y) * width + x]; }
  Eigen::Index size() const { return pixels.size(); }
};

struct Nuisance {
  int jitter_x = 0;  // pixels, in [-2, 2]
  int jitter_y = 0;
  double brightness = 1.0;  // in [0.6, 1.0]
  std::uint64_t noise_seed = 0;
  double noise_sigma = 0.02;  // 0 disables pixel noise

  friend bool operator==(const Nuisance&, const Nuisance&) = default;
};

inline constexpr int kMaxJitter = 2;
inline constexpr double kMinBrightness = 0.6;
inline constexpr double kMaxBrightness = 1.0;
inline constexpr int kMinImageSize = 16;

// Minimum change in summed pixel mass that adding a hat (resp. glasses) causes
// inside its region, for a noiseless render at 32x32. Scales with area.
inline constexpr double kHatMassThreshold = 40.0;
inline constexpr double kGlassesMassThreshold = 15.0;

Nuisance sample_nuisance(Rng& rng, double noise_sigma = 0.02);

// Pure function of its arguments. Throws ConfigError if size < 16.
Image render_stimulus(Attributes attrs, const Nuisance& nuisance, int size = 32);

// Pixel masks (1 inside) of the hat band and the glasses outline for a render
// with the given nuisance.
Image hat_region(const Nuisance& nuisance, int size = 32);
Image glasses_region(const Nuisance& nuisance, int size = 32);

struct Stimulus {
  Image image;
  Attributes attributes;
  Nuisance nuisance;

  Category category() const { return attributes.category(); }
};

struct DatasetConfig {
  std::size_t train = 2000;
  std::size_t test_per_category = 25;
  int size = 32;
  std::uint64_t seed = 0;
  double noise_sigma = 0.02;
};

struct Dataset {
  std::vector<Stimulus> train;
  std::vector<Stimulus> test;

  std::array<std::size_t, 4> train_counts() const;
  std::array<std::size_t, 4> test_counts() const;
  int image_width() const;
  int image_height() const;
};

// Train split: uniform over categories and nuisance. Test split: exactly
// test_per_category of each category. Train and test noise seeds are disjoint.
Dataset make_dataset(const DatasetConfig& config);

// Writes <dir>/<split>_<index>.pgm (8-bit P5) plus <dir>/manifest.csv with
// header `path,glasses,hat,split`.
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir);

// Reads a manifest (paths relative to image_dir). Images are resized
// bilinearly to size x size. Throws IngestionError naming the offending row.
Dataset load_external_dataset(const std::filesystem::path& image_dir,
                              const std::filesystem::path& manifest, int size = 32);

Image read_pgm(const std::filesystem::path& path);
void write_pgm(const Image& image, const std::filesystem::path& path);
Image resize_bilinear(const Image& image, int width, int height);

// Stacks images into a batch matrix, one image per row.
Matrix stack_images(const std::vector<const Image*>& images);

}  // namespace rlbvae

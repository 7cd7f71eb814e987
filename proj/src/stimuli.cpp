#include "rlbvae/stimuli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "rlbvae/io.hpp"

namespace rlbvae {

namespace {

// Face geometry in units of the image side, before jitter.
constexpr double kFaceCx = 0.50, kFaceCy = 0.56;
constexpr double kFaceRx = 0.30, kFaceRy = 0.36;
constexpr double kEyeDx = 0.13, kEyeDy = -0.08, kEyeR = 0.045;
constexpr double kMouthDy = 0.17, kMouthHalfW = 0.10, kMouthHalfH = 0.025;
constexpr double kHatHalfW = 0.36, kHatAbove = 0.12, kHatBelow = 0.16;
constexpr double kLensR = 0.10, kLensHalfT = 0.04, kBridgeHalfT = 0.035;

constexpr double kBackground = 0.55;
constexpr double kSkin = 0.85;
constexpr double kEye = 0.55;
constexpr double kMouth = 0.60;
constexpr double kHat = 0.0;
constexpr double kFrame = 0.0;

struct Geometry {
  double s;
  double jx, jy;

  // Normalized, jitter-compensated coordinates of a pixel centre.
  std::pair<double, double> uv(int x, int y) const {
    return {(x + 0.5 - jx) / s, (y + 0.5 - jy) / s};
  }

  static bool in_face(double u, double v) {
    const double du = (u - kFaceCx) / kFaceRx;
    const double dv = (v - kFaceCy) / kFaceRy;
    return du * du + dv * dv <= 1.0;
  }
  static bool in_eye(double u, double v) {
    for (double side : {-1.0, 1.0}) {
      if (std::hypot(u - (kFaceCx + side * kEyeDx), v - (kFaceCy + kEyeDy)) <= kEyeR)
        return true;
    }
    return false;
  }
  static bool in_mouth(double u, double v) {
    return std::abs(u - kFaceCx) <= kMouthHalfW &&
           std::abs(v - (kFaceCy + kMouthDy)) <= kMouthHalfH;
  }
  static bool in_hat(double u, double v) {
    const double top = kFaceCy - kFaceRy;
    return std::abs(u - kFaceCx) <= kHatHalfW && v >= top - kHatAbove &&
           v <= top + kHatBelow;
  }
  static bool in_glasses(double u, double v) {
    const double ey = kFaceCy + kEyeDy;
    for (double side : {-1.0, 1.0}) {
      const double d = std::hypot(u - (kFaceCx + side * kEyeDx), v - ey);
      if (std::abs(d - kLensR) <= kLensHalfT) return true;
    }
    const double bridge_half = kEyeDx - kLensR;
    return std::abs(u - kFaceCx) <= bridge_half && std::abs(v - ey) <= kBridgeHalfT;
  }
};

void check_size(int size) {
  if (size < kMinImageSize) {
    throw ConfigError("image size " + std::to_string(size) + " is below the minimum " +
                      std::to_string(kMinImageSize));
  }
}

template <typename Pred>
Image mask_of(const Nuisance& n, int size, Pred pred) {
  check_size(size);
  const Geometry g{double(size), double(n.jitter_x), double(n.jitter_y)};
  Image out(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      auto [u, v] = g.uv(x, y);
      out.at(x, y) = pred(u, v) ? 1.0 : 0.0;
    }
  }
  return out;
}

std::array<std::size_t, 4> count_categories(const std::vector<Stimulus>& v) {
  std::array<std::size_t, 4> c{};
  for (const auto& s : v) ++c[static_cast<int>(s.category())];
  return c;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& raw, bool& out) {
  const std::string s = trim(raw);
  if (s == "1" || s == "true" || s == "True" || s == "TRUE") {
    out = true;
    return true;
  }
  if (s == "0" || s == "false" || s == "False" || s == "FALSE") {
    out = false;
    return true;
  }
  return false;
}

}  // namespace

const char* category_name(Category c) {
  switch (c) {
    case Category::neither: return "neither";
    case Category::glasses: return "glasses";
    case Category::hat: return "hat";
    case Category::both: return "both";
  }
  return "?";
}

Category category_from_name(const std::string& name) {
  for (Category c : kAllCategories) {
    if (name == category_name(c)) return c;
  }
  throw ConfigError("unknown category '" + name + "'");
}

double reward_of(Attributes attrs) {
  return 25.0 * (attrs.glasses ? 1 : 0) + 50.0 * (attrs.hat ? 1 : 0);
}

Nuisance sample_nuisance(Rng& rng, double noise_sigma) {
  Nuisance n;
  n.jitter_x = static_cast<int>(rng.uniform_index(2 * kMaxJitter + 1)) - kMaxJitter;
  n.jitter_y = static_cast<int>(rng.uniform_index(2 * kMaxJitter + 1)) - kMaxJitter;
  n.brightness = rng.uniform(kMinBrightness, kMaxBrightness);
  n.noise_seed = rng.next_u64();
  n.noise_sigma = noise_sigma;
  return n;
}

Image render_stimulus(Attributes attrs, const Nuisance& nuisance, int size) {
  check_size(size);
  const Geometry g{double(size), double(nuisance.jitter_x), double(nuisance.jitter_y)};
  Image img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      auto [u, v] = g.uv(x, y);
      double p = kBackground;
      if (Geometry::in_face(u, v)) {
        p = kSkin;
        if (Geometry::in_eye(u, v)) p = kEye;
        if (Geometry::in_mouth(u, v)) p = kMouth;
        p *= nuisance.brightness;  // background and accessories are unscaled
      }
      if (attrs.hat && Geometry::in_hat(u, v)) p = kHat;
      if (attrs.glasses && Geometry::in_glasses(u, v)) p = kFrame;
      img.at(x, y) = p;
    }
  }
  if (nuisance.noise_sigma > 0.0) {
    Rng rng(nuisance.noise_seed);
    for (Eigen::Index i = 0; i < img.size(); ++i) {
      img.pixels[i] += nuisance.noise_sigma * rng.normal();
    }
  }
  img.pixels = img.pixels.cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

Image hat_region(const Nuisance& nuisance, int size) {
  return mask_of(nuisance, size, Geometry::in_hat);
}

Image glasses_region(const Nuisance& nuisance, int size) {
  return mask_of(nuisance, size, Geometry::in_glasses);
}

std::array<std::size_t, 4> Dataset::train_counts() const { return count_categories(train); }
std::array<std::size_t, 4> Dataset::test_counts() const { return count_categories(test); }

int Dataset::image_width() const {
  if (!train.empty()) return train.front().image.width;
  return test.empty() ? 0 : test.front().image.width;
}

int Dataset::image_height() const {
  if (!train.empty()) return train.front().image.height;
  return test.empty() ? 0 : test.front().image.height;
}

Dataset make_dataset(const DatasetConfig& config) {
  if (config.test_per_category < 1) throw ConfigError("test_per_category must be >= 1");
  if (config.train < 4) throw ConfigError("train size must be >= 4");
  check_size(config.size);

  Dataset ds;
  std::set<std::uint64_t> train_seeds;
  ds.train.reserve(config.train);
  for (std::size_t i = 0; i < config.train; ++i) {
    Rng rng(derive_seed(config.seed, "stimuli.train", {i}));
    const auto attrs = Attributes::from(static_cast<Category>(rng.uniform_index(4)));
    const Nuisance n = sample_nuisance(rng, config.noise_sigma);
    train_seeds.insert(n.noise_seed);
    ds.train.push_back({render_stimulus(attrs, n, config.size), attrs, n});
  }

  ds.test.reserve(4 * config.test_per_category);
  for (Category c : kAllCategories) {
    for (std::size_t i = 0; i < config.test_per_category; ++i) {
      Rng rng(derive_seed(config.seed, "stimuli.test", {std::uint64_t(c), i}));
      Nuisance n = sample_nuisance(rng, config.noise_sigma);
      while (train_seeds.contains(n.noise_seed)) n.noise_seed = rng.next_u64();
      const auto attrs = Attributes::from(c);
      ds.test.push_back({render_stimulus(attrs, n, config.size), attrs, n});
    }
  }
  return ds;
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (width < 1 || height < 1) throw ConfigError("resize target must be positive");
  if (image.width == width && image.height == height) return image;
  Image out(width, height);
  const double sx = double(image.width) / width;
  const double sy = double(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(image.height - 1));
    const int y0 = int(std::floor(fy));
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(image.width - 1));
      const int x0 = int(std::floor(fx));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      const double top = (1 - tx) * image.at(x0, y0) + tx * image.at(x1, y0);
      const double bottom = (1 - tx) * image.at(x0, y1) + tx * image.at(x1, y1);
      out.at(x, y) = (1 - ty) * top + ty * bottom;
    }
  }
  return out;
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::string bytes(static_cast<std::size_t>(image.size()), '\0');
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const double p = std::clamp(image.pixels[i], 0.0, 1.0);
    bytes[static_cast<std::size_t>(i)] = static_cast<char>(std::lround(p * 255.0));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open image " + path.string());

  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {}
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    return tok;
  };
  auto next_int = [&](const char* what) {
    const std::string tok = next_token();
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
      return static_cast<int>(v);
    } catch (const std::exception&) {
      throw IngestionError(path.string() + ": bad PGM " + what + " '" + tok + "'");
    }
  };

  const std::string magic = next_token();
  if (magic != "P5" && magic != "P2") {
    throw IngestionError(path.string() + ": not a PGM image");
  }
  const int w = next_int("width");
  const int h = next_int("height");
  const int maxval = next_int("maxval");
  if (maxval > 65535) throw IngestionError(path.string() + ": maxval above 65535");

  Image img(w, h);
  const Eigen::Index n = img.size();
  if (magic == "P2") {
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::string tok = next_token();
      if (tok.empty()) throw IngestionError(path.string() + ": truncated pixel data");
      img.pixels[i] = std::stod(tok) / maxval;
    }
  } else {
    const int bpp = maxval > 255 ? 2 : 1;
    std::string bytes(static_cast<std::size_t>(n * bpp), '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
      throw IngestionError(path.string() + ": truncated pixel data");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto* b = reinterpret_cast<const unsigned char*>(bytes.data()) + i * bpp;
      const int v = bpp == 2 ? (b[0] << 8) | b[1] : b[0];
      img.pixels[i] = double(v) / maxval;
    }
  }
  img.pixels = img.pixels.cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

void export_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "path,glasses,hat,split\n";
  auto emit = [&](const std::vector<Stimulus>& split, const char* name) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      std::ostringstream file;
      file << name << '_' << std::setw(5) << std::setfill('0') << i << ".pgm";
      write_pgm(split[i].image, dir / file.str());
      manifest << file.str() << ',' << int(split[i].attributes.glasses) << ','
               << int(split[i].attributes.hat) << ',' << name << '\n';
    }
  };
  emit(dataset.train, "train");
  emit(dataset.test, "test");
  write_file_atomic(dir / "manifest.csv", manifest.str());
}

Dataset load_external_dataset(const std::filesystem::path& image_dir,
                              const std::filesystem::path& manifest, int size) {
  check_size(size);
  std::ifstream in(manifest);
  if (!in) throw IngestionError("cannot open manifest " + manifest.string());

  std::string line;
  if (!std::getline(in, line) || trim(line) != "path,glasses,hat,split") {
    throw IngestionError(manifest.string() +
                         ": header must be 'path,glasses,hat,split'");
  }
  Dataset ds;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const std::string where = manifest.string() + " row " + std::to_string(row);
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (fields.size() != 4) {
      throw IngestionError(where + ": expected 4 fields, got " +
                           std::to_string(fields.size()));
    }
    Attributes attrs;
    if (!parse_bool(fields[1], attrs.glasses) || !parse_bool(fields[2], attrs.hat)) {
      throw IngestionError(where + ": attribute columns must be 0/1 or true/false");
    }
    if (fields[3] != "train" && fields[3] != "test") {
      throw IngestionError(where + ": split must be 'train' or 'test'");
    }
    const std::filesystem::path file = image_dir / fields[0];
    if (!std::filesystem::exists(file)) {
      throw IngestionError(where + ": missing file " + file.string());
    }
    Image img;
    try {
      img = read_pgm(file);
    } catch (const IngestionError& e) {
      throw IngestionError(where + ": " + e.what());
    }
    Stimulus s{resize_bilinear(img, size, size), attrs, Nuisance{}};
    (fields[3] == "train" ? ds.train : ds.test).push_back(std::move(s));
  }
  return ds;
}

Matrix stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) return Matrix(0, 0);
  const Eigen::Index d = images.front()->size();
  Matrix out(static_cast<Eigen::Index>(images.size()), d);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->size() != d) throw ShapeError("stack_images: mixed image sizes");
    out.row(static_cast<Eigen::Index>(i)) = images[i]->pixels.transpose();
  }
  return out;
}

}  // namespace rlbvae

// Checkpoint binary layout (all integers and floats little-endian):
//
//   magic        8 bytes  "RLBVAECK"
//   version      u32
//   n_z          u32
//   width        u32
//   height       u32
//   hidden       u32
//   epoch        u64
//   tensors      u32 count, then for each tensor in NetworkParams order:
//                  u64 rows, u64 cols, rows*cols f64 in row-major order
//   adam         f64 learning_rate, beta1, beta2, epsilon; u64 step;
//                first moments then second moments, each tensor row-major
//                with the shape of its parameter
//   loss curve   u64 count, then per entry f64 reconstruction, kl, utility,
//                total, beta, upsilon
//
// The sidecar <path>.meta.txt repeats the header as `key = value` lines.

#include <bit>
#include <cstring>
#include <sstream>

#include "rlbvae/io.hpp"
#include "rlbvae/vae.hpp"

namespace rlbvae {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'L', 'B', 'V', 'A', 'E', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  void tensor_data(const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(m(r, c));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void raw(char* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  void tensor_data(Matrix& m) {
    need(std::size_t(m.size()) * sizeof(double));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>();
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw FormatError("checkpoint truncated");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

std::string metadata(const Checkpoint& c) {
  std::ostringstream m;
  const auto& s = c.params.shape;
  m << "format = rlbvae-checkpoint\n"
    << "version = " << Checkpoint::kFormatVersion << '\n'
    << "n_z = " << s.n_z << '\n'
    << "width = " << s.width << '\n'
    << "height = " << s.height << '\n'
    << "hidden = " << s.hidden << '\n'
    << "epoch = " << c.epoch << '\n'
    << "adam_step = " << c.adam.step << '\n'
    << "learning_rate = " << format_double(c.adam.learning_rate) << '\n';
  if (!c.loss_curve.empty()) {
    const auto& last = c.loss_curve.back();
    m << "final_reconstruction = " << format_double(last.reconstruction) << '\n'
      << "final_kl = " << format_double(last.kl) << '\n'
      << "beta = " << format_double(last.beta) << '\n'
      << "upsilon = " << format_double(last.upsilon) << '\n';
  }
  m << "tensors =";
  for (const char* name : NetworkParams::kTensorNames) m << ' ' << name;
  m << '\n';
  return m.str();
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(Checkpoint::kFormatVersion);
  const auto& s = c.params.shape;
  w.put<std::uint32_t>(std::uint32_t(s.n_z));
  w.put<std::uint32_t>(std::uint32_t(s.width));
  w.put<std::uint32_t>(std::uint32_t(s.height));
  w.put<std::uint32_t>(std::uint32_t(s.hidden));
  w.put<std::uint64_t>(c.epoch);

  const auto tensors = c.params.tensors();
  w.put<std::uint32_t>(std::uint32_t(tensors.size()));
  for (const Matrix* t : tensors) {
    w.put<std::uint64_t>(std::uint64_t(t->rows()));
    w.put<std::uint64_t>(std::uint64_t(t->cols()));
    w.tensor_data(*t);
  }

  if (c.adam.m.size() != tensors.size() || c.adam.v.size() != tensors.size()) {
    throw FormatError("checkpoint optimizer state does not match parameters");
  }
  w.put<double>(c.adam.learning_rate);
  w.put<double>(c.adam.beta1);
  w.put<double>(c.adam.beta2);
  w.put<double>(c.adam.epsilon);
  w.put<std::uint64_t>(c.adam.step);
  for (const auto& m : c.adam.m) w.tensor_data(m);
  for (const auto& v : c.adam.v) w.tensor_data(v);

  w.put<std::uint64_t>(c.loss_curve.size());
  for (const auto& l : c.loss_curve) {
    for (double v : {l.reconstruction, l.kl, l.utility, l.total, l.beta, l.upsilon}) {
      w.put<double>(v);
    }
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kFormatVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  NetworkShape shape;
  shape.n_z = int(r.get<std::uint32_t>());
  shape.width = int(r.get<std::uint32_t>());
  shape.height = int(r.get<std::uint32_t>());
  shape.hidden = int(r.get<std::uint32_t>());
  c.epoch = r.get<std::uint64_t>();
  c.params = NetworkParams::zeros(shape);

  auto tensors = c.params.tensors();
  if (r.get<std::uint32_t>() != tensors.size()) throw FormatError("tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != std::uint64_t(tensors[i]->rows()) || cols != std::uint64_t(tensors[i]->cols())) {
      throw FormatError(std::string("tensor ") + NetworkParams::kTensorNames[i] +
                        " has unexpected shape");
    }
    r.tensor_data(*tensors[i]);
  }

  c.adam = make_adam(c.params);
  c.adam.learning_rate = r.get<double>();
  c.adam.beta1 = r.get<double>();
  c.adam.beta2 = r.get<double>();
  c.adam.epsilon = r.get<double>();
  c.adam.step = r.get<std::uint64_t>();
  for (auto& m : c.adam.m) r.tensor_data(m);
  for (auto& v : c.adam.v) r.tensor_data(v);

  const auto n = r.get<std::uint64_t>();
  c.loss_curve.resize(n);
  for (auto& l : c.loss_curve) {
    l.reconstruction = r.get<double>();
    l.kl = r.get<double>();
    l.utility = r.get<double>();
    l.total = r.get<double>();
    l.beta = r.get<double>();
    l.upsilon = r.get<double>();
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
  std::filesystem::path meta = path;
  meta += ".meta.txt";
  write_file_atomic(meta, metadata(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError("missing checkpoint " + path.string());
  return deserialize_checkpoint(read_file(path));
}

void write_loss_curve_csv(const std::vector<LossBreakdown>& curve,
                          const std::filesystem::path& path) {
  CsvTable t({"epoch", "reconstruction", "kl", "utility", "total"});
  for (std::size_t e = 0; e < curve.size(); ++e) {
    t.add_row({std::to_string(e), format_double(curve[e].reconstruction),
               format_double(curve[e].kl), format_double(curve[e].utility),
               format_double(curve[e].total)});
  }
  t.save(path);
}

}  // namespace rlbvae

#include "pinflow/neuralflow.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pinflow {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kStateVersion = 1;

class ByteWriter {
 public:
  void raw(const char* bytes, std::size_t n) { buf_.insert(buf_.end(), bytes, bytes + n); }

  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    buf_.insert(buf_.end(), bytes, bytes + sizeof(T));
  }

  void params(const Parameters& p) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      const Mat& w = p.weights[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) put<double>(w(r, c));
      for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) put<double>(p.biases[l][i]);
    }
  }

  void write_with_crc(const std::filesystem::path& path) {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(buf_.size())));
    put<std::uint32_t>(crc);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path_);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (buf_.size() < 8) throw std::runtime_error(path_ + ": truncated file");
    const auto* tail = reinterpret_cast<const unsigned char*>(buf_.data() + buf_.size() - 4);
    const std::uint32_t stored = static_cast<std::uint32_t>(tail[0]) | (static_cast<std::uint32_t>(tail[1]) << 8) |
                                 (static_cast<std::uint32_t>(tail[2]) << 16) |
                                 (static_cast<std::uint32_t>(tail[3]) << 24);
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(buf_.size() - 4)));
    if (crc != stored) throw std::runtime_error(path_ + ": CRC mismatch");
    end_ = buf_.size() - 4;
  }

  void expect_magic(const char* magic) {
    if (end_ - pos_ < 4 || std::memcmp(buf_.data() + pos_, magic, 4) != 0)
      throw std::runtime_error(path_ + ": bad magic bytes");
    pos_ += 4;
  }

  template <typename T>
  T get() {
    if (end_ - pos_ < sizeof(T)) throw std::runtime_error(path_ + ": truncated file");
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  void params(Parameters& p) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      Mat& w = p.weights[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = get<double>();
      for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) p.biases[l][i] = get<double>();
    }
  }

  void expect_end() const {
    if (pos_ != end_) throw std::runtime_error(path_ + ": trailing bytes");
  }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FlowNetwork& net, const CheckpointInfo& info) {
  ByteWriter w;
  w.raw("PINF", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.widths().size()));
  for (int width : net.widths()) w.put<std::uint32_t>(static_cast<std::uint32_t>(width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.activation()));
  w.put<std::uint32_t>(info.measurement_dim);
  w.put<std::uint32_t>(info.feature_flags);
  w.params(net.params());
  w.write_with_crc(path);
}

FlowNetwork load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  ByteReader r(path);
  r.expect_magic("PINF");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto n = r.get<std::uint32_t>();
  if (n < 2 || n > 1024) throw std::runtime_error(path.string() + ": implausible layer count");
  std::vector<int> widths;
  for (std::uint32_t i = 0; i < n; ++i) widths.push_back(static_cast<int>(r.get<std::uint32_t>()));
  const auto activation = r.get<std::uint32_t>();
  if (activation != static_cast<std::uint32_t>(Activation::silu))
    throw std::runtime_error(path.string() + ": unknown activation id");
  CheckpointInfo meta;
  meta.measurement_dim = r.get<std::uint32_t>();
  meta.feature_flags = r.get<std::uint32_t>();
  FlowNetwork net = FlowNetwork::zeros(std::move(widths));
  r.params(net.params());
  r.expect_end();
  if (info != nullptr) *info = meta;
  return net;
}

void save_trainer_state(const std::filesystem::path& path, const OptimizerState& state, int next_epoch) {
  ByteWriter w;
  w.raw("PINS", 4);
  w.put<std::uint32_t>(kStateVersion);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(next_epoch));
  w.put<std::uint64_t>(state.step);
  w.params(state.first_moment);
  w.params(state.second_moment);
  w.write_with_crc(path);
}

OptimizerState load_trainer_state(const std::filesystem::path& path, const FlowNetwork& net, int* next_epoch) {
  ByteReader r(path);
  r.expect_magic("PINS");
  if (r.get<std::uint32_t>() != kStateVersion) throw std::runtime_error(path.string() + ": unsupported state version");
  const auto epoch = r.get<std::uint64_t>();
  OptimizerState s = OptimizerState::for_network(net);
  s.step = r.get<std::uint64_t>();
  r.params(s.first_moment);
  r.params(s.second_moment);
  r.expect_end();
  if (next_epoch != nullptr) *next_epoch = static_cast<int>(epoch);
  return s;
}

}  // namespace pinflow

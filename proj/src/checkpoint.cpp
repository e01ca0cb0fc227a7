#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <zlib.h>

#include "v2x/neuro.hpp"

namespace v2x::neuro {

namespace {

constexpr char kMagic[8] = {'V', '2', 'X', 'Q', 'N', 'E', 'T', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

  std::size_t pos() const { return pos_; }

 private:
  unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(bytes_[i]); }
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("truncated checkpoint");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

std::string encode_checkpoint(std::span<const QNetwork> nets) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(nets.size()));
  for (const auto& net : nets) {
    put_u32(out, static_cast<std::uint32_t>(net.layer_sizes().size()));
    for (int s : net.layer_sizes()) put_u32(out, static_cast<std::uint32_t>(s));
    for (double p : net.parameters()) put_f64(out, p);
  }
  put_u32(out, checksum(out.data(), out.size()));
  return out;
}

std::vector<QNetwork> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 12 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a Q-network checkpoint");
  }
  const std::size_t body = bytes.size() - 4;
  const std::string trailer = bytes.substr(body);
  Reader tail(trailer);
  if (tail.u32() != checksum(bytes.data(), body)) throw std::runtime_error("checkpoint checksum mismatch");

  const std::string payload = bytes.substr(0, body);
  Reader r(payload);
  r.skip(sizeof(kMagic));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<QNetwork> nets;
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::uint32_t layers = r.u32();
    if (layers < 2 || layers > 64) throw std::runtime_error("corrupt layer count");
    std::vector<int> sizes;
    for (std::uint32_t l = 0; l < layers; ++l) sizes.push_back(static_cast<int>(r.u32()));
    QNetwork net = QNetwork::init(sizes, 0);
    std::vector<double> params(net.parameter_count());
    for (auto& p : params) p = r.f64();
    net.set_parameters(params);
    nets.push_back(std::move(net));
  }
  if (r.pos() != payload.size()) throw std::runtime_error("trailing bytes in checkpoint");
  return nets;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const QNetwork> nets) {
  const std::string bytes = encode_checkpoint(nets);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<QNetwork> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace v2x::neuro

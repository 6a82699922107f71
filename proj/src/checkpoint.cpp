#include "npdet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "npdet/error.hpp"
#include "npdet/hash.hpp"

namespace npdet {

namespace {

constexpr char kMagic[4] = {'N', 'P', 'D', 'K'};

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    need(sizeof(U), what);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  void need(std::uint64_t n, const char* what) const {
    if (n > bytes_.size() - pos_) {
      throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::span<const std::uint8_t> take(std::uint64_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, data.config_text.size());
  out.insert(out.end(), data.config_text.begin(), data.config_text.end());
  put<std::uint64_t>(out, data.blobs.size());
  for (const auto& blob : data.blobs) {
    put<std::uint64_t>(out, blob.size());
    for (float v : blob) put<float>(out, v);
  }
  Fnv1a64 h;
  h.update(out);
  put<std::uint64_t>(out, h.digest());
  return out;
}

CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw BadMagicError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint version " + std::to_string(version) + ", expected " +
                               std::to_string(kCheckpointVersion));
  }
  CheckpointData data;
  const auto text_size = r.get<std::uint64_t>("config length");
  const auto text = r.take(text_size, "config text");
  data.config_text.assign(text.begin(), text.end());
  const auto count = r.get<std::uint64_t>("blob count");
  // Each blob needs at least its length prefix; guards absurd counts.
  r.need(count * 8, "blob table");
  data.blobs.resize(count);
  for (auto& blob : data.blobs) {
    const auto n = r.get<std::uint64_t>("blob length");
    if (n > r.remaining() / 4) throw TruncatedError("checkpoint truncated while reading blob data");
    blob.resize(n);
    for (auto& v : blob) v = r.get<float>("blob data");
  }
  const std::size_t body = r.position();
  const auto stored = r.get<std::uint64_t>("checksum");
  if (r.remaining() != 0) throw ChecksumError("trailing bytes after checkpoint checksum");
  Fnv1a64 h;
  h.update(bytes.first(body));
  if (h.digest() != stored) throw ChecksumError("checkpoint checksum mismatch");
  return data;
}

void write_checkpoint_file(const CheckpointData& data, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(data);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write checkpoint " + path.string());
}

CheckpointData read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace npdet

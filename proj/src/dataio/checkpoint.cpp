#include "dfrf/dataio/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dfrf/dataio/errors.hpp"

namespace dfrf::dataio {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'F', 'R', 'F'};

template <typename Real>
constexpr std::uint32_t profile_code() {
  return sizeof(Real) == 4 ? 0u : 1u;
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof v);
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void text(const std::string& s) {
    pod<std::uint64_t>(s.size());
    raw(s.data(), s.size());
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  void raw(void* out, std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError(ErrorCode::CorruptTable, "unexpected end of checkpoint");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string text() {
    const auto n = pod<std::uint64_t>();
    if (n > bytes_.size() - pos_) throw DataError(ErrorCode::CorruptTable, "string runs past end of checkpoint");
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(ErrorCode::MissingFile, path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

// Validates magic and version; returns the profile code.
std::uint32_t read_header(Reader& r, const fs::path& path) {
  char magic[4];
  if (r.remaining() < sizeof magic) throw DataError(ErrorCode::BadMagic, path.string());
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(ErrorCode::BadMagic, path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw DataError(ErrorCode::VersionMismatch,
                    path.string() + ": version " + std::to_string(version) + ", expected " +
                        std::to_string(kCheckpointVersion));
  const auto profile = r.pod<std::uint32_t>();
  if (profile > 1) throw DataError(ErrorCode::CorruptTable, path.string() + ": unknown profile code");
  return profile;
}

}  // namespace

template <typename Real>
void save_checkpoint(const fs::path& path, const Checkpoint<Real>& checkpoint) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint32_t>(profile_code<Real>());
  w.text(checkpoint.config_json);
  w.text(checkpoint.rng_state);
  w.pod<std::uint64_t>(checkpoint.tensors.size());
  for (const auto& [name, tensor] : checkpoint.tensors) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(tensor.rank()));
    for (auto e : tensor.shape()) w.pod<std::int64_t>(e);
    w.raw(tensor.data().data(), tensor.data().size() * sizeof(Real));
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    out.flush();
    if (!out) throw DataError(ErrorCode::WriteFailed, tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError(ErrorCode::WriteFailed, path.string() + ": " + ec.message());
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const fs::path& path) {
  Reader r(slurp(path));
  if (read_header(r, path) != profile_code<Real>())
    throw DataError(ErrorCode::ProfileMismatch, path.string() + " was written with a different numeric profile");
  Checkpoint<Real> cp;
  cp.config_json = r.text();
  cp.rng_state = r.text();
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<std::uint32_t>();
    if (name_len > r.remaining()) throw DataError(ErrorCode::CorruptTable, "tensor name runs past end");
    std::string name(name_len, '\0');
    r.raw(name.data(), name_len);
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw DataError(ErrorCode::CorruptTable, name + ": implausible rank");
    diffmath::Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& e : shape) {
      e = r.pod<std::int64_t>();
      if (e <= 0) throw DataError(ErrorCode::CorruptTable, name + ": non-positive extent");
      n *= static_cast<std::uint64_t>(e);
      if (n > r.remaining()) throw DataError(ErrorCode::CorruptTable, name + ": values run past end");
    }
    std::vector<Real> values(n);
    r.raw(values.data(), n * sizeof(Real));
    cp.tensors.push_back({std::move(name), diffmath::Tensor<Real>(std::move(shape), std::move(values))});
  }
  if (r.remaining() != 0) throw DataError(ErrorCode::CorruptTable, path.string() + ": trailing bytes");
  return cp;
}

diffmath::Profile checkpoint_profile(const fs::path& path) {
  Reader r(slurp(path));
  return read_header(r, path) == 0 ? diffmath::Profile::F32 : diffmath::Profile::F64;
}

template void save_checkpoint(const fs::path&, const Checkpoint<float>&);
template void save_checkpoint(const fs::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint(const fs::path&);
template Checkpoint<double> load_checkpoint(const fs::path&);

}  // namespace dfrf::dataio

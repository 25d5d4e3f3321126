#include "mtsmae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "mtsmae/error.hpp"

namespace mtsmae {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'S', 'M', 'A', 'E', 'C', 'K'};

std::size_t element_size(DType dtype) { return dtype == DType::Float32 ? 4 : 8; }

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return value;
  }

  std::string string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  std::vector<std::uint8_t> raw(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::Io, fmt::format("{}: truncated checkpoint at byte {}", source_, pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

template <typename T>
std::vector<std::uint8_t> encode(std::span<const T> values) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * sizeof(T));
  for (T v : values) put<Bits>(out, std::bit_cast<Bits>(v));
  return out;
}

template <typename T>
std::vector<T> decode(const std::vector<std::uint8_t>& bytes) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<T> out(bytes.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) {
    Bits b = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) b |= static_cast<Bits>(static_cast<Bits>(bytes[i * sizeof(T) + k]) << (8 * k));
    out[i] = std::bit_cast<T>(b);
  }
  return out;
}

}  // namespace

template <typename T>
Checkpoint Checkpoint::capture(const MtsmaeModel<T>& model, std::uint64_t epoch, std::string config_text,
                               std::string rng_state) {
  Checkpoint ck;
  ck.dtype = dtype_of<T>();
  ck.epoch = epoch;
  ck.config_text = std::move(config_text);
  ck.rng_state = std::move(rng_state);
  for (const auto& p : model.parameters()) {
    ck.tensors.push_back({p.name, p.value.shape(), encode<T>(p.value.data())});
  }
  return ck;
}

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<double> Checkpoint::values(const TensorRecord& record) const {
  if (dtype == DType::Float32) {
    auto v = decode<float>(record.bytes);
    return {v.begin(), v.end()};
  }
  return decode<double>(record.bytes);
}

template <typename T>
void Checkpoint::restore(MtsmaeModel<T>& model, const std::vector<std::string>& prefixes) const {
  std::vector<std::string> problems;
  std::vector<std::pair<NamedParameter<T>*, const TensorRecord*>> plan;
  for (auto& p : model.parameters()) {
    bool wanted = false;
    for (const auto& prefix : prefixes) wanted = wanted || p.name.rfind(prefix, 0) == 0;
    if (!wanted) continue;
    const TensorRecord* rec = find(p.name);
    if (rec == nullptr) {
      problems.push_back(fmt::format("{} missing from checkpoint", p.name));
    } else if (rec->shape != p.value.shape()) {
      problems.push_back(fmt::format("{}: checkpoint {} vs model {}", p.name, shape_to_string(rec->shape),
                                     shape_to_string(p.value.shape())));
    } else {
      plan.emplace_back(&p, rec);
    }
  }
  if (!problems.empty()) {
    std::string msg = fmt::format("{} incompatible tensor(s): ", problems.size());
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw Error(ErrorKind::Transfer, msg);
  }
  for (auto& [param, rec] : plan) {
    auto dst = param->value.mutable_data();
    if (dtype == dtype_of<T>()) {
      auto v = decode<T>(rec->bytes);
      std::copy(v.begin(), v.end(), dst.begin());
    } else {
      auto v = values(*rec);
      std::transform(v.begin(), v.end(), dst.begin(), [](double x) { return static_cast<T>(x); });
    }
  }
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  put<std::uint64_t>(out, epoch);
  put_string(out, config_text);
  put_string(out, rng_state);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_string(out, t.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::Io, fmt::format("{}: not a checkpoint (bad magic)", source));
  }
  std::vector<std::uint8_t> body(bytes.begin() + sizeof(kMagic), bytes.end());
  Reader r(body, source);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw Error(ErrorKind::Io, fmt::format("{}: unsupported checkpoint version {}", source, version));
  }
  Checkpoint ck;
  const auto tag = r.get<std::uint8_t>();
  if (tag != static_cast<std::uint8_t>(DType::Float32) && tag != static_cast<std::uint8_t>(DType::Float64)) {
    throw Error(ErrorKind::Io, fmt::format("{}: unknown element type tag {}", source, tag));
  }
  ck.dtype = static_cast<DType>(tag);
  ck.epoch = r.get<std::uint64_t>();
  ck.config_text = r.string();
  ck.rng_state = r.string();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.string();
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    t.bytes = r.raw(shape_numel(t.shape) * element_size(ck.dtype));
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw Error(ErrorKind::Io, fmt::format("{}: trailing bytes after checkpoint records", source));
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write checkpoint {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, fmt::format("write failed for {}", path.string()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open checkpoint {}", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

template <typename T>
void transfer_encoder(MtsmaeModel<T>& model, const Checkpoint& pretrained) {
  pretrained.restore(model, {"embed.", "encoder."});
}

template Checkpoint Checkpoint::capture(const MtsmaeModel<float>&, std::uint64_t, std::string, std::string);
template Checkpoint Checkpoint::capture(const MtsmaeModel<double>&, std::uint64_t, std::string, std::string);
template void Checkpoint::restore(MtsmaeModel<float>&, const std::vector<std::string>&) const;
template void Checkpoint::restore(MtsmaeModel<double>&, const std::vector<std::string>&) const;
template void transfer_encoder(MtsmaeModel<float>&, const Checkpoint&);
template void transfer_encoder(MtsmaeModel<double>&, const Checkpoint&);

}  // namespace mtsmae

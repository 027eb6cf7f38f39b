#include "maoml/autodiff/param_set.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "maoml/error.hpp"

namespace maoml::ad {

void ParamSet::add(std::string name, Tensor value) {
  if (index_of(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  total_ += value.size();
  entries_.push_back({std::move(name), std::move(value)});
}

std::optional<std::size_t> ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto i = index_of(name);
  if (!i) throw ValidationError("no parameter named '" + name + "'");
  return entries_[*i].value;
}

Tensor& ParamSet::at(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

Tensor ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_);
  for (const auto& e : entries_) flat.insert(flat.end(), e.value.data().begin(), e.value.data().end());
  if (flat.empty()) throw ValidationError("cannot flatten an empty ParamSet");
  return Tensor::vector(std::move(flat));
}

ParamSet ParamSet::unflatten(const Tensor& flat) const {
  if (flat.size() != total_)
    throw ShapeError("unflatten: expected " + std::to_string(total_) + " values, got " +
                     std::to_string(flat.size()));
  ParamSet out;
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    std::vector<double> chunk(flat.data().begin() + offset, flat.data().begin() + offset + e.value.size());
    offset += e.value.size();
    out.add(e.name, Tensor(e.value.shape(), std::move(chunk)));
  }
  return out;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.name, Tensor::zeros(e.value.shape()));
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name != other.entries_[i].name || entries_[i].value.shape() != other.entries_[i].value.shape())
      return false;
  return true;
}

void ParamSet::axpy(double scale, const ParamSet& other) {
  if (!same_layout(other)) throw ShapeError("axpy: ParamSet layouts differ");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].value.data();
    auto src = other.entries_[i].value.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
  }
}

ParamSet ParamSet::scaled(double scale) const {
  ParamSet out = *this;
  for (auto& e : out.entries_)
    for (double& v : e.value.data()) v *= scale;
  return out;
}

double ParamSet::dot(const ParamSet& other) const {
  if (!same_layout(other)) throw ShapeError("dot: ParamSet layouts differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto a = entries_[i].value.data();
    auto b = other.entries_[i].value.data();
    for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  }
  return acc;
}

double ParamSet::norm() const { return std::sqrt(dot(*this)); }

bool ParamSet::all_finite() const noexcept { return !first_non_finite().has_value(); }

std::optional<std::string> ParamSet::first_non_finite() const {
  for (const auto& e : entries_)
    if (!e.value.all_finite()) return e.name;
  return std::nullopt;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i)
    if (a.entries_[i].name != b.entries_[i].name || !bit_equal(a.entries_[i].value, b.entries_[i].value))
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// Binary format: "MAOP", u32 entry count, then per entry
//   u16 name length, name bytes, u8 rank, rank x u32 dims, f64 data.
// All integers and floats little-endian.

namespace {

constexpr char kMagic[4] = {'M', 'A', 'O', 'P'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size()) throw ParseError(std::string("truncated ParamSet: ") + what, pos_);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += sizeof(T);
    if constexpr (sizeof(T) == 8) {
      return std::bit_cast<T>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string get_string(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ParseError("truncated ParamSet: name", pos_);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> ParamSet::to_bytes() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    if (e.name.size() > 0xFFFF) throw ValidationError("parameter name too long: " + e.name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.rank()));
    for (auto d : e.value.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : e.value.data()) put_le<double>(out, v);
  }
  return out;
}

ParamSet ParamSet::from_bytes(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  for (char c : kMagic)
    if (in.get<std::uint8_t>("magic") != static_cast<std::uint8_t>(c)) throw ParseError("bad ParamSet magic", 0);
  const auto count = in.get<std::uint32_t>("entry count");
  ParamSet out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint16_t>("name length");
    std::string name = in.get_string(name_len);
    const auto rank = in.get<std::uint8_t>("rank");
    Shape shape;
    for (std::uint8_t r = 0; r < rank; ++r) {
      const auto at = in.pos();
      const auto d = in.get<std::uint32_t>("dim");
      if (d == 0) throw ParseError("zero dimension in entry '" + name + "'", at);
      shape.push_back(d);
    }
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = in.get<double>("data");
    const auto at = in.pos();
    try {
      out.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), at);
    }
  }
  if (!in.done()) throw ParseError("trailing bytes after ParamSet", in.pos());
  return out;
}

void ParamSet::save(const std::filesystem::path& path) const {
  const auto bytes = to_bytes();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

ParamSet ParamSet::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

}  // namespace maoml::ad

#include "somforge/somt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

namespace somforge::somt {
namespace {

static_assert(std::endian::native == std::endian::little, "SOMT I/O assumes a little-endian host");

template <class U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw FormatError(FormatError::Kind::truncated,
                        std::string("SOMT truncated while reading ") + what + " at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

FileDType natural_dtype(DType d) { return d == DType::f32 ? FileDType::f32 : FileDType::f64; }

}  // namespace

std::string encode(const TensorList& tensors, std::optional<FileDType> file_dtype) {
  FileDType fd = file_dtype.value_or(tensors.empty() ? FileDType::f32 : natural_dtype(tensors.front().second.dtype()));
  const DType expected = fd == FileDType::f64 ? DType::f64 : DType::f32;
  if (tensors.size() > 0xffffffffULL) throw Error("SOMT: too many tensors");
  std::string out = "SOMT";
  put<std::uint8_t>(out, kVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(fd));
  put<std::uint8_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (t.dtype() != expected)
      throw DTypeError("SOMT: tensor '" + name + "' is " + std::string(to_string(t.dtype())) +
                       " but the file dtype requires " + std::string(to_string(expected)));
    if (name.size() > 0xffff) throw Error("SOMT: tensor name too long");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    auto dims = t.shape().dims();
    std::size_t ndim = dims.size();
    if (fd == FileDType::complex_f32) {
      if (ndim == 0 || dims[ndim - 1] != 2)
        throw ShapeError("SOMT: complex tensor '" + name + "' needs a trailing extent of 2, got " +
                         t.shape().to_string());
      --ndim;
    }
    put<std::uint8_t>(out, static_cast<std::uint8_t>(ndim));
    for (std::size_t i = 0; i < ndim; ++i) {
      if (dims[i] > 0xffffffffULL) throw ShapeError("SOMT: extent exceeds u32");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(dims[i]));
    }
    dispatch(t.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto v = t.values<T>();
      out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
    });
  }
  return out;
}

TensorList decode(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != "SOMT") {
    if (bytes.size() < 4) throw FormatError(FormatError::Kind::truncated, "SOMT truncated before magic");
    throw FormatError(FormatError::Kind::bad_magic, "bad magic: not a SOMT file");
  }
  in.take(4, "magic");
  const auto version = in.get<std::uint8_t>("version");
  if (version != kVersion)
    throw FormatError(FormatError::Kind::version_mismatch,
                      "SOMT version mismatch: file has " + std::to_string(version) + ", reader supports " +
                          std::to_string(kVersion));
  const auto code = in.get<std::uint8_t>("dtype");
  if (code < 1 || code > 3) throw FormatError(FormatError::Kind::invalid, "SOMT: unknown dtype code " + std::to_string(code));
  const auto fd = static_cast<FileDType>(code);
  const bool named = in.get<std::uint8_t>("name-table flag") != 0;
  const auto count = in.get<std::uint32_t>("tensor count");
  TensorList out;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = "t" + std::to_string(k);
    if (named) {
      const auto len = in.get<std::uint16_t>("name length");
      name = std::string(in.take(len, "name"));
    }
    const auto ndim = in.get<std::uint8_t>("ndim");
    std::vector<std::size_t> dims;
    for (std::uint8_t i = 0; i < ndim; ++i) dims.push_back(in.get<std::uint32_t>("dims"));
    if (fd == FileDType::complex_f32) dims.push_back(2);
    if (dims.size() > Shape::kMaxRank)
      throw FormatError(FormatError::Kind::invalid, "SOMT: tensor '" + name + "' has rank above 4");
    const Shape shape(dims);
    if (fd == FileDType::f64) {
      auto raw = in.take(shape.numel() * sizeof(double), "payload");
      std::vector<double> v(shape.numel());
      std::memcpy(v.data(), raw.data(), raw.size());
      out.emplace_back(std::move(name), Tensor(shape, std::move(v)));
    } else {
      auto raw = in.take(shape.numel() * sizeof(float), "payload");
      std::vector<float> v(shape.numel());
      std::memcpy(v.data(), raw.data(), raw.size());
      out.emplace_back(std::move(name), Tensor(shape, std::move(v)));
    }
  }
  if (!in.done()) throw FormatError(FormatError::Kind::invalid, "SOMT: trailing bytes after last tensor");
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void save_tensors(const std::filesystem::path& path, const TensorList& tensors, std::optional<FileDType> file_dtype) {
  write_file_atomic(path, encode(tensors, file_dtype));
}

TensorList load_tensors(const std::filesystem::path& path) { return decode(read_file(path)); }

bool contains(const TensorList& tensors, std::string_view name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& find(const TensorList& tensors, std::string_view name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError(FormatError::Kind::invalid, "SOMT: missing tensor '" + std::string(name) + "'");
}

Tensor text_tensor(std::string_view text, DType dtype) {
  std::vector<double> v;
  v.reserve(text.size());
  for (unsigned char c : text) v.push_back(static_cast<double>(c));
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v)).to(dtype);
}

std::string tensor_text(const Tensor& t) {
  std::string s;
  s.reserve(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double v = t.at(i);
    if (v < 0 || v > 255 || v != static_cast<double>(static_cast<int>(v)))
      throw FormatError(FormatError::Kind::invalid, "SOMT: text tensor holds a non-byte value");
    s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return s;
}

}  // namespace somforge::somt

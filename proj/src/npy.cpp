#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iterator>
#include <numeric>

#include "kernelspect/tensor_io.hpp"

namespace kernelspect {

static_assert(std::endian::native == std::endian::little,
              "NPY payloads are handled in native little-endian layout");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kAlignment = 64;

struct NpyHeader {
  DType dtype = DType::Float64;
  bool big_endian = false;
  bool fortran_order = false;
  Shape shape;
};

[[noreturn]] void malformed(const std::string& origin, const std::string& why) {
  throw Error(ErrorCode::MalformedHeader, origin + ": " + why);
}

// Minimal reader for the Python dict literal numpy writes, e.g.
// {'descr': '<f8', 'fortran_order': False, 'shape': (3, 3), }
class HeaderParser {
 public:
  HeaderParser(std::string_view text, const std::string& origin)
      : text_(text), origin_(origin) {}

  NpyHeader parse() {
    NpyHeader header;
    bool have_descr = false, have_order = false, have_shape = false;
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = read_string();
      expect(':');
      if (key == "descr") {
        parse_descr(read_string(), header);
        have_descr = true;
      } else if (key == "fortran_order") {
        header.fortran_order = read_bool();
        have_order = true;
      } else if (key == "shape") {
        header.shape = read_shape();
        have_shape = true;
      } else {
        malformed(origin_, "unexpected header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
      }
    }
    if (!have_descr || !have_order || !have_shape) {
      malformed(origin_, "header lacks descr, fortran_order or shape");
    }
    return header;
  }

 private:
  char peek() const {
    if (pos_ >= text_.size()) malformed(origin_, "header ends unexpectedly");
    return text_[pos_];
  }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
  }
  void expect(char c) {
    skip_ws();
    if (peek() != c) malformed(origin_, std::string("expected '") + c + "' in header");
    ++pos_;
  }
  std::string read_string() {
    skip_ws();
    const char quote = peek();
    if (quote != '\'' && quote != '"') malformed(origin_, "expected quoted string");
    const auto end = text_.find(quote, pos_ + 1);
    if (end == std::string_view::npos) malformed(origin_, "unterminated string");
    std::string out(text_.substr(pos_ + 1, end - pos_ - 1));
    pos_ = end + 1;
    return out;
  }
  bool read_bool() {
    skip_ws();
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    malformed(origin_, "fortran_order is not a boolean");
  }
  Shape read_shape() {
    Shape shape;
    expect('(');
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return shape;
      }
      std::int64_t dim = 0;
      const char* begin = text_.data() + pos_;
      const auto [ptr, ec] = std::from_chars(begin, text_.data() + text_.size(), dim);
      if (ec != std::errc() || dim < 0) malformed(origin_, "bad shape entry");
      pos_ += static_cast<std::size_t>(ptr - begin);
      shape.push_back(dim);
      skip_ws();
      if (peek() == ',') ++pos_;
    }
  }
  void parse_descr(const std::string& descr, NpyHeader& header) {
    if (descr.size() < 3) {
      throw Error(ErrorCode::UnsupportedDtype, origin_ + ": dtype '" + descr + "'");
    }
    const char order = descr[0];
    const std::string code = descr.substr(1);
    if (order != '<' && order != '>' && order != '|' && order != '=') {
      throw Error(ErrorCode::UnsupportedDtype, origin_ + ": dtype '" + descr + "'");
    }
    if (code == "f4") {
      header.dtype = DType::Float32;
    } else if (code == "f8") {
      header.dtype = DType::Float64;
    } else if (code == "u1") {
      header.dtype = DType::UInt8;
    } else if (code == "i8") {
      header.dtype = DType::Int64;
    } else {
      throw Error(ErrorCode::UnsupportedDtype, origin_ + ": dtype '" + descr + "'");
    }
    header.big_endian = order == '>' && dtype_size(header.dtype) > 1;
  }

  std::string_view text_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

std::string descr_for(DType dtype) {
  switch (dtype) {
    case DType::Float32: return "<f4";
    case DType::Float64: return "<f8";
    case DType::UInt8: return "|u1";
    case DType::Int64: return "<i8";
  }
  return "";
}

// Reorders a column-major buffer into row-major.
std::vector<std::byte> fortran_to_c(std::span<const std::byte> src,
                                    const Shape& shape, std::size_t elem) {
  const std::size_t count = static_cast<std::size_t>(element_count(shape));
  std::vector<std::byte> dst(count * elem);
  const std::size_t rank = shape.size();
  std::vector<std::int64_t> index(rank, 0);
  for (std::size_t f = 0; f < count; ++f) {
    // index holds the multi-index of Fortran-linear position f
    std::size_t c = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      c = c * static_cast<std::size_t>(shape[d]) + static_cast<std::size_t>(index[d]);
    }
    std::copy_n(src.begin() + f * elem, elem, dst.begin() + c * elem);
    for (std::size_t d = 0; d < rank; ++d) {
      if (++index[d] < shape[d]) break;
      index[d] = 0;
    }
  }
  return dst;
}

}  // namespace

Tensor parse_npy(std::span<const std::byte> file, const std::string& origin) {
  if (file.size() < kMagicLen + 2 ||
      !std::equal(kMagic, kMagic + kMagicLen,
                  reinterpret_cast<const char*>(file.data()))) {
    malformed(origin, "missing NPY magic");
  }
  const auto major = static_cast<unsigned>(file[6]);
  std::size_t header_len = 0;
  std::size_t prefix = 0;
  auto byte_at = [&](std::size_t i) { return static_cast<std::size_t>(file[i]); };
  if (major == 1) {
    if (file.size() < 10) malformed(origin, "truncated header length");
    header_len = byte_at(8) | (byte_at(9) << 8);
    prefix = 10;
  } else if (major == 2) {
    if (file.size() < 12) malformed(origin, "truncated header length");
    header_len = byte_at(8) | (byte_at(9) << 8) | (byte_at(10) << 16) | (byte_at(11) << 24);
    prefix = 12;
  } else {
    malformed(origin, "unsupported NPY version " + std::to_string(major));
  }
  if (file.size() < prefix + header_len) malformed(origin, "truncated header");
  const std::string_view text(reinterpret_cast<const char*>(file.data()) + prefix,
                              header_len);
  const NpyHeader header = HeaderParser(text, origin).parse();

  const std::size_t elem = dtype_size(header.dtype);
  const std::size_t count = static_cast<std::size_t>(element_count(header.shape));
  const std::size_t offset = prefix + header_len;
  if (file.size() - offset < count * elem) {
    throw Error(ErrorCode::TruncatedPayload,
                origin + ": expected " + std::to_string(count * elem) +
                    " payload bytes, found " + std::to_string(file.size() - offset));
  }

  Tensor tensor(header.dtype, header.shape);
  auto payload = file.subspan(offset, count * elem);
  if (header.fortran_order && header.shape.size() > 1) {
    const auto reordered = fortran_to_c(payload, header.shape, elem);
    std::copy(reordered.begin(), reordered.end(), tensor.mutable_bytes().begin());
  } else {
    std::copy(payload.begin(), payload.end(), tensor.mutable_bytes().begin());
  }
  if (header.big_endian) {
    auto bytes = tensor.mutable_bytes();
    for (std::size_t i = 0; i < count; ++i) {
      std::reverse(bytes.begin() + i * elem, bytes.begin() + (i + 1) * elem);
    }
  }
  return tensor;
}

Tensor load_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  }
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  return parse_npy(std::as_bytes(std::span<const char>(raw)), path.string());
}

std::vector<std::byte> serialize_npy(const Tensor& tensor) {
  std::string dict = "{'descr': '" + descr_for(tensor.dtype()) +
                     "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < tensor.shape().size(); ++i) {
    dict += std::to_string(tensor.shape()[i]);
    if (i + 1 < tensor.shape().size() || tensor.shape().size() == 1) {
      dict += tensor.shape().size() == 1 ? "," : ", ";
    }
  }
  dict += "), }";

  std::size_t prefix = 10;
  std::size_t unpadded = prefix + dict.size() + 1;
  std::size_t total = (unpadded + kAlignment - 1) / kAlignment * kAlignment;
  std::uint8_t major = 1;
  if (total - prefix > 0xFFFF) {
    major = 2;
    prefix = 12;
    unpadded = prefix + dict.size() + 1;
    total = (unpadded + kAlignment - 1) / kAlignment * kAlignment;
  }
  dict.append(total - unpadded, ' ');
  dict.push_back('\n');
  const std::size_t header_len = dict.size();

  std::vector<std::byte> out;
  out.reserve(total + tensor.bytes().size());
  for (std::size_t i = 0; i < kMagicLen; ++i) {
    out.push_back(static_cast<std::byte>(kMagic[i]));
  }
  out.push_back(static_cast<std::byte>(major));
  out.push_back(std::byte{0});
  const std::size_t len_bytes = major == 1 ? 2 : 4;
  for (std::size_t i = 0; i < len_bytes; ++i) {
    out.push_back(static_cast<std::byte>((header_len >> (8 * i)) & 0xFF));
  }
  for (char c : dict) {
    out.push_back(static_cast<std::byte>(c));
  }
  out.insert(out.end(), tensor.bytes().begin(), tensor.bytes().end());
  return out;
}

void save_npy(const Tensor& tensor, const std::filesystem::path& path) {
  const auto bytes = serialize_npy(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
  }
}

}  // namespace kernelspect

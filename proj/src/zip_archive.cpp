#include "zip_archive.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "kernelspect/error.hpp"

namespace kernelspect::detail {

namespace {

constexpr std::uint32_t kEndOfCentralDir = 0x06054b50;
constexpr std::uint32_t kCentralHeader = 0x02014b50;
constexpr std::uint32_t kLocalHeader = 0x04034b50;

std::uint32_t le(const std::vector<std::byte>& d, std::size_t at, int width) {
  std::uint32_t v = 0;
  for (int i = width - 1; i >= 0; --i) {
    v = (v << 8) | static_cast<std::uint32_t>(d[at + i]);
  }
  return v;
}

}  // namespace

ZipArchive::ZipArchive(const std::filesystem::path& path) : origin_(path.string()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoFailure, "cannot open " + origin_);
  }
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  data_.resize(raw.size());
  std::memcpy(data_.data(), raw.data(), raw.size());

  if (data_.size() < 22) {
    throw Error(ErrorCode::MalformedManifest, origin_ + ": not a zip archive");
  }
  std::size_t eocd = data_.size() - 22;
  while (true) {
    if (le(data_, eocd, 4) == kEndOfCentralDir) break;
    if (eocd == 0 || data_.size() - eocd > 22 + 0xFFFF) {
      throw Error(ErrorCode::MalformedManifest, origin_ + ": no end of central directory");
    }
    --eocd;
  }
  const std::size_t count = le(data_, eocd + 10, 2);
  std::size_t pos = le(data_, eocd + 16, 4);
  for (std::size_t i = 0; i < count; ++i) {
    if (pos + 46 > data_.size() || le(data_, pos, 4) != kCentralHeader) {
      throw Error(ErrorCode::MalformedManifest, origin_ + ": corrupt central directory");
    }
    Entry e;
    e.method = le(data_, pos + 10, 2);
    e.compressed_size = le(data_, pos + 20, 4);
    e.uncompressed_size = le(data_, pos + 24, 4);
    const std::size_t name_len = le(data_, pos + 28, 2);
    const std::size_t extra_len = le(data_, pos + 30, 2);
    const std::size_t comment_len = le(data_, pos + 32, 2);
    e.local_header_offset = le(data_, pos + 42, 4);
    std::string name(reinterpret_cast<const char*>(data_.data()) + pos + 46, name_len);
    entries_[name] = e;
    pos += 46 + name_len + extra_len + comment_len;
  }
}

bool ZipArchive::contains(const std::string& name) const { return entries_.count(name) > 0; }

std::vector<std::string> ZipArchive::names() const {
  std::vector<std::string> out;
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

std::vector<std::byte> ZipArchive::read(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw Error(ErrorCode::MissingTensor, origin_ + ": no entry '" + name + "'");
  }
  const Entry& e = it->second;
  const std::size_t lh = e.local_header_offset;
  if (lh + 30 > data_.size() || le(data_, lh, 4) != kLocalHeader) {
    throw Error(ErrorCode::MalformedManifest, origin_ + ": corrupt local header for " + name);
  }
  const std::size_t start = lh + 30 + le(data_, lh + 26, 2) + le(data_, lh + 28, 2);
  if (start + e.compressed_size > data_.size()) {
    throw Error(ErrorCode::TruncatedPayload, origin_ + ": entry " + name + " is truncated");
  }
  std::vector<std::byte> out(e.uncompressed_size);
  if (e.method == 0) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(start), e.uncompressed_size,
                out.begin());
    return out;
  }
  if (e.method != 8) {
    throw Error(ErrorCode::MalformedManifest,
                origin_ + ": unsupported compression method " + std::to_string(e.method));
  }
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) {
    throw Error(ErrorCode::IoFailure, "zlib initialisation failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<std::byte*>(data_.data() + start));
  zs.avail_in = static_cast<uInt>(e.compressed_size);
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != out.size()) {
    throw Error(ErrorCode::TruncatedPayload, origin_ + ": cannot inflate " + name);
  }
  return out;
}

}  // namespace kernelspect::detail

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace kernelspect::detail {

/// Read-only view of a .zip / .npz archive (stored or deflated entries, no
/// zip64). The whole archive is held in memory.
class ZipArchive {
 public:
  explicit ZipArchive(const std::filesystem::path& path);

  bool contains(const std::string& name) const;
  std::vector<std::byte> read(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  struct Entry {
    std::size_t local_header_offset = 0;
    std::size_t compressed_size = 0;
    std::size_t uncompressed_size = 0;
    unsigned method = 0;
  };

  std::string origin_;
  std::vector<std::byte> data_;
  std::map<std::string, Entry> entries_;
};

}  // namespace kernelspect::detail

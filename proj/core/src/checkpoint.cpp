#include "scinet/checkpoint.hpp"

#include <zlib.h>

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include "scinet/errors.hpp"

namespace scinet {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'C', 'I', 'N', 'C', 'K', 'P', 'T'};
constexpr size_t kHeaderSize = kMagic.size() + 4 + 8 + 8 + 8;

template <typename T>
void put(std::string& out, T value) {
  for (size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get(const std::string& in, size_t offset) {
  T value = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return value;
}

uint32_t crc32_of(const char* data, size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  std::string bytes(kMagic.begin(), kMagic.end());
  put<uint32_t>(bytes, file.header.version);
  put<uint64_t>(bytes, file.header.config_hash);
  put<uint64_t>(bytes, file.header.step);
  put<uint64_t>(bytes, file.payload.size());
  bytes += file.payload;
  put<uint32_t>(bytes, crc32_of(bytes.data(), bytes.size()));

  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  const std::string where = "checkpoint " + path.string();

  if (bytes.size() < kHeaderSize + 4) throw IntegrityError(where + " is truncated (header incomplete)");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw IntegrityError(where + " is not a checkpoint (bad magic)");
  }
  CheckpointFile file;
  size_t at = kMagic.size();
  file.header.version = get<uint32_t>(bytes, at);
  at += 4;
  file.header.config_hash = get<uint64_t>(bytes, at);
  at += 8;
  file.header.step = get<uint64_t>(bytes, at);
  at += 8;
  const uint64_t payload_size = get<uint64_t>(bytes, at);
  at += 8;
  if (file.header.version != kCheckpointVersion) {
    throw IntegrityError(where + " has unsupported version " + std::to_string(file.header.version));
  }
  if (payload_size > bytes.size() - kHeaderSize - 4 ||
      bytes.size() != kHeaderSize + payload_size + 4) {
    throw IntegrityError(where + " is truncated or has trailing bytes (expected " +
                         std::to_string(kHeaderSize + payload_size + 4) + " bytes, found " +
                         std::to_string(bytes.size()) + ")");
  }
  const size_t body = kHeaderSize + payload_size;
  if (crc32_of(bytes.data(), body) != get<uint32_t>(bytes, body)) {
    throw IntegrityError(where + " failed its CRC-32 check");
  }
  file.payload = bytes.substr(kHeaderSize, payload_size);
  return file;
}

void require_config_hash(const CheckpointHeader& header, uint64_t expected,
                         const std::filesystem::path& path) {
  if (header.config_hash != expected) {
    std::ostringstream os;
    os << "checkpoint " << path.string() << " was written for a different model configuration (hash "
       << std::hex << header.config_hash << ", current " << expected << ")";
    throw ConfigError(os.str());
  }
}

}  // namespace scinet

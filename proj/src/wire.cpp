// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "craftkit/wire.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <mutex>
#include <unordered_map>

#include "craftkit/errors.hpp"

namespace craftkit {

void WireWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void WireWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void WireWriter::bytes(const std::uint8_t* data, std::size_t len) {
  buf_.insert(buf_.end(), data, data + len);
}

std::uint8_t WireReader::u8() { return buf_.at(pos_++); }

std::uint32_t WireReader::u32() {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_.at(pos_++)) << (8 * i);
  return v;
}

std::uint64_t WireReader::u64() {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_.at(pos_++)) << (8 * i);
  return v;
}

std::vector<std::uint8_t> WireReader::rest() {
  std::vector<std::uint8_t> out(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), buf_.end());
  pos_ = buf_.size();
  return out;
}

namespace {

std::mutex& fd_write_mutex(int fd) {
  static std::mutex registry_mu;
  static std::unordered_map<int, std::mutex> registry;
  std::lock_guard<std::mutex> lk(registry_mu);
  return registry[fd];
}

bool write_all(int fd, const void* data, std::size_t len) {
  const char* p = static_cast<const char*>(data);
  while (len > 0) {
    const ssize_t n = ::send(fd, p, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

bool read_all(int fd, void* data, std::size_t len) {
  char* p = static_cast<char*>(data);
  while (len > 0) {
    const ssize_t n = ::recv(fd, p, len, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    if (n == 0) return false;  // EOF
    p += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

void send_frame(int fd, const std::vector<std::uint8_t>& payload) {
  std::uint8_t header[4];
  const std::uint32_t len = static_cast<std::uint32_t>(payload.size());
  for (int i = 0; i < 4; ++i) header[i] = static_cast<std::uint8_t>((len >> (8 * i)) & 0xFF);
  std::lock_guard<std::mutex> lk(fd_write_mutex(fd));
  if (!write_all(fd, header, 4) || !write_all(fd, payload.data(), payload.size())) {
    throw StorageError("socket write failed (peer gone)");
  }
}

std::optional<std::vector<std::uint8_t>> recv_frame(int fd) {
  std::uint8_t header[4];
  if (!read_all(fd, header, 4)) return std::nullopt;
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(header[i]) << (8 * i);
  if (len > (64u << 20)) throw Error("oversized frame");
  std::vector<std::uint8_t> payload(len);
  if (len > 0 && !read_all(fd, payload.data(), len)) return std::nullopt;
  return payload;
}

}  // namespace craftkit

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

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace craftkit {

// Multi-process wire format: every frame is a 4-byte little-endian length
// followed by that many payload bytes; the first payload byte is the frame
// type. All integers little-endian.

enum class FrameType : std::uint8_t {
  kHello = 1,        // worker->hub: endpoint, node, generation, spawned flag
  kWelcome = 2,      // hub->worker: endpoint
  kData = 3,         // both ways: peer, tag, bytes
  kHeartbeat = 4,    // worker->hub
  kBye = 5,          // worker->hub: clean shutdown
  kFailed = 6,       // hub->worker: endpoint
  kBarrierEnter = 7, // worker->hub: key, contribution, abort key, members
  kBarrierOk = 8,    // hub->worker: key, result
  kBarrierFail = 9,  // hub->worker: key, failed endpoints
  kBarrierMismatch = 10,  // hub->worker: key
  kBarrierRevoked = 11,   // hub->worker: key
  kRevoke = 12,      // worker->hub: group key
  kRevoked = 13,     // hub->worker: group key
  kSpawnReq = 14,    // worker->hub: req id, placement, node, count
  kSpawnOk = 15,     // hub->worker: req id, node, endpoints
  kSpawnFail = 16,   // hub->worker: req id
  kReserveQuery = 17,    // worker->hub: req id
  kReserveCount = 18,    // hub->worker: req id, count
};

// Payload builder / parser.
class WireWriter {
 public:
  explicit WireWriter(FrameType type) { buf_.push_back(static_cast<std::uint8_t>(type)); }

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void bytes(const std::uint8_t* data, std::size_t len);

  const std::vector<std::uint8_t>& payload() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class WireReader {
 public:
  explicit WireReader(const std::vector<std::uint8_t>& payload) : buf_(payload) {}

  FrameType type() const { return static_cast<FrameType>(buf_.at(0)); }
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::vector<std::uint8_t> rest();

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 1;
};

// Framed, blocking socket helpers. send_frame is atomic with respect to
// other callers on the same descriptor.
void send_frame(int fd, const std::vector<std::uint8_t>& payload);
// Returns nullopt on EOF or connection reset.
std::optional<std::vector<std::uint8_t>> recv_frame(int fd);

}  // namespace craftkit

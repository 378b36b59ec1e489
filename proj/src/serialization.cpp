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

#include "craftkit/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "craftkit/crc32.hpp"
#include "craftkit/errors.hpp"

namespace craftkit {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

// Payload components are 4- or 8-byte scalars; complex types are pairs of
// half-width components. On little-endian hosts this is a straight copy.
std::size_t component_size(ElementType t) {
  switch (t) {
    case ElementType::kByte: return 1;
    case ElementType::kInt32:
    case ElementType::kFloat32:
    case ElementType::kComplex64: return 4;
    default: return 8;
  }
}

void append_payload_le(std::vector<std::uint8_t>& out, std::span<const std::uint8_t> native,
                       ElementType t) {
  if constexpr (std::endian::native == std::endian::little) {
    out.insert(out.end(), native.begin(), native.end());
    (void)t;
  } else {
    const std::size_t cs = component_size(t);
    for (std::size_t i = 0; i < native.size(); i += cs) {
      for (std::size_t k = 0; k < cs; ++k) out.push_back(native[i + cs - 1 - k]);
    }
  }
}

void copy_payload_native(std::vector<std::uint8_t>& out, std::span<const std::uint8_t> le,
                         ElementType t) {
  out.resize(le.size());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), le.data(), le.size());
    (void)t;
  } else {
    const std::size_t cs = component_size(t);
    for (std::size_t i = 0; i < le.size(); i += cs) {
      for (std::size_t k = 0; k < cs; ++k) out[i + k] = le[i + cs - 1 - k];
    }
  }
}

bool valid_kind(std::uint8_t k) { return k >= 1 && k <= 4; }
bool valid_elem(std::uint8_t e) { return e >= 1 && e <= 7; }

}  // namespace

std::size_t element_size(ElementType t) {
  switch (t) {
    case ElementType::kInt32: return 4;
    case ElementType::kInt64: return 8;
    case ElementType::kFloat32: return 4;
    case ElementType::kFloat64: return 8;
    case ElementType::kComplex64: return 8;
    case ElementType::kComplex128: return 16;
    case ElementType::kByte: return 1;
  }
  throw TypeMismatchError("unknown element type tag");
}

const char* to_string(EntryKind k) {
  switch (k) {
    case EntryKind::kScalar: return "scalar";
    case EntryKind::kArray: return "array";
    case EntryKind::kMultiArray: return "multi-array";
    case EntryKind::kPacked: return "packed";
  }
  return "?";
}

const char* to_string(ElementType t) {
  switch (t) {
    case ElementType::kInt32: return "int32";
    case ElementType::kInt64: return "int64";
    case ElementType::kFloat32: return "float32";
    case ElementType::kFloat64: return "float64";
    case ElementType::kComplex64: return "complex64";
    case ElementType::kComplex128: return "complex128";
    case ElementType::kByte: return "byte";
  }
  return "?";
}

std::vector<std::uint8_t> encode_entry(const EntryHeader& header,
                                       std::span<const std::uint8_t> payload) {
  if (payload.size() != header.payload_bytes()) {
    throw TypeMismatchError("payload size does not match entry dimensions");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kEntryHeaderSize + payload.size() + 4);
  for (std::uint8_t m : kEntryMagic) out.push_back(m);
  put_u16(out, kEntryFormatVersion);
  out.push_back(static_cast<std::uint8_t>(header.kind));
  out.push_back(static_cast<std::uint8_t>(header.elem));
  put_u64(out, header.dim0);
  put_u64(out, header.dim1);
  put_u64(out, static_cast<std::uint64_t>(header.column));
  append_payload_le(out, payload, header.elem);
  const std::uint32_t crc = crc32(out.data(), out.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((crc >> (8 * i)) & 0xFF));
  return out;
}

EntryHeader decode_entry(std::span<const std::uint8_t> bytes,
                         std::vector<std::uint8_t>& payload_out) {
  if (bytes.size() < kEntryHeaderSize + 4) {
    throw CorruptionError("entry truncated");
  }
  if (std::memcmp(bytes.data(), kEntryMagic, 4) != 0) {
    throw CorruptionError("entry magic mismatch");
  }
  const std::uint32_t stored_crc = get_u32(bytes.data() + bytes.size() - 4);
  const std::uint32_t computed = crc32(bytes.data(), bytes.size() - 4);
  if (stored_crc != computed) {
    throw CorruptionError("entry CRC mismatch");
  }
  if (get_u16(bytes.data() + 4) != kEntryFormatVersion) {
    throw CorruptionError("unsupported entry format version");
  }
  if (!valid_kind(bytes[6]) || !valid_elem(bytes[7])) {
    throw CorruptionError("invalid entry tags");
  }
  EntryHeader h;
  h.kind = static_cast<EntryKind>(bytes[6]);
  h.elem = static_cast<ElementType>(bytes[7]);
  h.dim0 = get_u64(bytes.data() + 8);
  h.dim1 = get_u64(bytes.data() + 16);
  h.column = static_cast<std::int64_t>(get_u64(bytes.data() + 24));
  const std::size_t expect = h.payload_bytes();
  if (bytes.size() != kEntryHeaderSize + expect + 4) {
    throw CorruptionError("entry payload length mismatch");
  }
  copy_payload_native(payload_out, bytes.subspan(kEntryHeaderSize, expect), h.elem);
  return h;
}

void require_entry_shape(const EntryHeader& decoded, const EntryHeader& expected,
                         const std::string& context) {
  if (decoded != expected) {
    throw TypeMismatchError(
        context + ": stored entry is " + to_string(decoded.kind) + "/" + to_string(decoded.elem) +
        " [" + std::to_string(decoded.dim0) + "x" + std::to_string(decoded.dim1) + " col " +
        std::to_string(decoded.column) + "], target expects " + to_string(expected.kind) + "/" +
        to_string(expected.elem) + " [" + std::to_string(expected.dim0) + "x" +
        std::to_string(expected.dim1) + " col " + std::to_string(expected.column) + "]");
  }
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw StorageError("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw StorageError("write failed: " + path);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw StorageError("cannot open for read: " + path);
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
  if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw StorageError("read failed: " + path);
  return bytes;
}

}  // namespace craftkit

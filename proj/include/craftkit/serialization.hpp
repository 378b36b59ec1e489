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

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace craftkit {

// Entry file layout (all integers little-endian):
//
//   [0..4)   magic "CKPT"
//   [4..6)   format version, u16
//   [6]      entry kind tag
//   [7]      element type tag
//   [8..16)  dim0, u64   (scalar: 1; array: n; multi-array: n; packed: byte count)
//   [16..24) dim1, u64   (multi-array: m; otherwise 0)
//   [24..32) column, i64 (multi-array: -1 = all columns, else selected column; otherwise 0)
//   [32..)   payload, little-endian element data
//   last 4   CRC-32 over everything before it
//
// The same codec backs every built-in checkpointable type, so corruption and
// type confusion are detected uniformly on read.

inline constexpr std::uint8_t kEntryMagic[4] = {'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kEntryFormatVersion = 1;
inline constexpr std::size_t kEntryHeaderSize = 32;

enum class EntryKind : std::uint8_t {
  kScalar = 1,
  kArray = 2,
  kMultiArray = 3,
  kPacked = 4,
};

enum class ElementType : std::uint8_t {
  kInt32 = 1,
  kInt64 = 2,
  kFloat32 = 3,
  kFloat64 = 4,
  kComplex64 = 5,   // std::complex<float>, stored as (re, im)
  kComplex128 = 6,  // std::complex<double>, stored as (re, im)
  kByte = 7,
};

std::size_t element_size(ElementType t);
const char* to_string(EntryKind k);
const char* to_string(ElementType t);

template <typename T>
struct ElementTypeOf;
template <> struct ElementTypeOf<std::int32_t> { static constexpr ElementType value = ElementType::kInt32; };
template <> struct ElementTypeOf<std::int64_t> { static constexpr ElementType value = ElementType::kInt64; };
template <> struct ElementTypeOf<float> { static constexpr ElementType value = ElementType::kFloat32; };
template <> struct ElementTypeOf<double> { static constexpr ElementType value = ElementType::kFloat64; };
template <> struct ElementTypeOf<std::complex<float>> { static constexpr ElementType value = ElementType::kComplex64; };
template <> struct ElementTypeOf<std::complex<double>> { static constexpr ElementType value = ElementType::kComplex128; };
template <> struct ElementTypeOf<std::uint8_t> { static constexpr ElementType value = ElementType::kByte; };

struct EntryHeader {
  EntryKind kind = EntryKind::kScalar;
  ElementType elem = ElementType::kByte;
  std::uint64_t dim0 = 0;
  std::uint64_t dim1 = 0;
  std::int64_t column = 0;

  std::uint64_t element_count() const {
    if (kind == EntryKind::kMultiArray) {
      return column >= 0 ? dim0 : dim0 * dim1;
    }
    return dim0;
  }
  std::uint64_t payload_bytes() const { return element_count() * element_size(elem); }

  bool operator==(const EntryHeader&) const = default;
};

// Encodes header + native-order payload into the on-disk byte sequence.
// `payload` must hold exactly header.payload_bytes() bytes of native data.
std::vector<std::uint8_t> encode_entry(const EntryHeader& header,
                                       std::span<const std::uint8_t> payload);

// Validates magic, version and CRC, returning the header; `payload_out`
// receives the payload converted to native element order. Throws
// CorruptionError on CRC/framing damage.
EntryHeader decode_entry(std::span<const std::uint8_t> bytes,
                         std::vector<std::uint8_t>& payload_out);

// Requires decoded == expected (kind, element type, dimensions); throws
// TypeMismatchError otherwise.
void require_entry_shape(const EntryHeader& decoded, const EntryHeader& expected,
                         const std::string& context);

// Whole-file helpers used by the checkpointable types.
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace craftkit

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

#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "craftkit/env.hpp"
#include "craftkit/errors.hpp"
#include "craftkit/serialization.hpp"

namespace craftkit {

// Base contract every checkpointable data type fulfills. update() refreshes
// the type's shadow copy from the live data (async-copy mode), write() and
// read() serialize to / from one file.
class Checkpointable {
 public:
  virtual ~Checkpointable() = default;

  virtual void update() = 0;
  virtual void write(const std::string& path) const = 0;
  virtual void read(const std::string& path) = 0;

  // Whether update() actually snapshots data, i.e. the type can be written
  // asynchronously while the live data keeps changing.
  virtual bool has_shadow() const = 0;
};

namespace detail {

template <typename T>
std::span<const std::uint8_t> as_bytes_of(const T* p, std::size_t count) {
  return {reinterpret_cast<const std::uint8_t*>(p), count * sizeof(T)};
}

}  // namespace detail

// One POD or std::complex element.
template <typename T>
class ScalarEntry final : public Checkpointable {
 public:
  ScalarEntry(T* live, AsyncMode mode) : live_(live), copy_mode_(mode == AsyncMode::kAsyncCopy) {
    if (copy_mode_) shadow_ = *live_;
  }

  void update() override {
    if (copy_mode_) shadow_ = *live_;
  }

  void write(const std::string& path) const override {
    const T* src = copy_mode_ ? &shadow_ : live_;
    write_file_bytes(path, encode_entry(header(), detail::as_bytes_of(src, 1)));
  }

  void read(const std::string& path) override {
    std::vector<std::uint8_t> payload;
    const EntryHeader h = decode_entry(read_file_bytes(path), payload);
    require_entry_shape(h, header(), path);
    std::memcpy(live_, payload.data(), sizeof(T));
  }

  bool has_shadow() const override { return copy_mode_; }

 private:
  EntryHeader header() const {
    return EntryHeader{EntryKind::kScalar, ElementTypeOf<T>::value, 1, 0, 0};
  }

  T* live_;
  bool copy_mode_;
  T shadow_{};
};

// Contiguous array of POD elements of fixed length.
template <typename T>
class ArrayEntry final : public Checkpointable {
 public:
  ArrayEntry(T* live, std::size_t n, AsyncMode mode)
      : live_(live), n_(n), copy_mode_(mode == AsyncMode::kAsyncCopy) {
    if (n_ == 0) throw ConfigError("array entry length must be positive");
    if (copy_mode_) shadow_.assign(live_, live_ + n_);
  }

  void update() override {
    if (copy_mode_) shadow_.assign(live_, live_ + n_);
  }

  void write(const std::string& path) const override {
    const T* src = copy_mode_ ? shadow_.data() : live_;
    write_file_bytes(path, encode_entry(header(), detail::as_bytes_of(src, n_)));
  }

  void read(const std::string& path) override {
    std::vector<std::uint8_t> payload;
    const EntryHeader h = decode_entry(read_file_bytes(path), payload);
    require_entry_shape(h, header(), path);
    std::memcpy(live_, payload.data(), n_ * sizeof(T));
  }

  bool has_shadow() const override { return copy_mode_; }

 private:
  EntryHeader header() const {
    return EntryHeader{EntryKind::kArray, ElementTypeOf<T>::value, n_, 0, 0};
  }

  T* live_;
  std::uint64_t n_;
  bool copy_mode_;
  std::vector<T> shadow_;
};

// n x m matrix given as an array of n row pointers. With column >= 0 only
// that column is checkpointed and restored; the rest of the matrix is never
// touched by read().
template <typename T>
class MultiArrayEntry final : public Checkpointable {
 public:
  MultiArrayEntry(T** rows, std::size_t n, std::size_t m, std::int64_t to_cp_col, AsyncMode mode)
      : rows_(rows), n_(n), m_(m), col_(to_cp_col), copy_mode_(mode == AsyncMode::kAsyncCopy) {
    if (n_ == 0 || m_ == 0) throw ConfigError("multi-array dimensions must be positive");
    if (col_ < -1 || col_ >= static_cast<std::int64_t>(m_)) {
      throw ConfigError("column selector out of range: " + std::to_string(col_));
    }
    if (copy_mode_) snapshot();
  }

  void update() override {
    if (copy_mode_) snapshot();
  }

  void write(const std::string& path) const override {
    std::vector<T> staged;
    const std::vector<T>& src = copy_mode_ ? shadow_ : (gather(staged), staged);
    write_file_bytes(path,
                     encode_entry(header(), detail::as_bytes_of(src.data(), src.size())));
  }

  void read(const std::string& path) override {
    std::vector<std::uint8_t> payload;
    const EntryHeader h = decode_entry(read_file_bytes(path), payload);
    require_entry_shape(h, header(), path);
    const T* p = reinterpret_cast<const T*>(payload.data());
    if (col_ >= 0) {
      for (std::size_t i = 0; i < n_; ++i) rows_[i][col_] = p[i];
    } else {
      for (std::size_t i = 0; i < n_; ++i) {
        std::memcpy(rows_[i], p + i * m_, m_ * sizeof(T));
      }
    }
  }

  bool has_shadow() const override { return copy_mode_; }

 private:
  EntryHeader header() const {
    return EntryHeader{EntryKind::kMultiArray, ElementTypeOf<T>::value, n_, m_, col_};
  }

  void gather(std::vector<T>& out) const {
    if (col_ >= 0) {
      out.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) out[i] = rows_[i][col_];
    } else {
      out.resize(n_ * m_);
      for (std::size_t i = 0; i < n_; ++i) {
        std::memcpy(out.data() + i * m_, rows_[i], m_ * sizeof(T));
      }
    }
  }

  void snapshot() { gather(shadow_); }

  T** rows_;
  std::uint64_t n_;
  std::uint64_t m_;
  std::int64_t col_;
  bool copy_mode_;
  std::vector<T> shadow_;
};

// Opaque buffer produced by a caller-supplied pack function and consumed by
// an unpack function, for data with no flat layout.
class PackedBufferEntry final : public Checkpointable {
 public:
  using PackFn = std::function<void(std::vector<std::uint8_t>&)>;
  using UnpackFn = std::function<void(std::span<const std::uint8_t>)>;

  PackedBufferEntry(PackFn pack, UnpackFn unpack, std::size_t packed_size, AsyncMode mode)
      : pack_(std::move(pack)),
        unpack_(std::move(unpack)),
        size_(packed_size),
        copy_mode_(mode == AsyncMode::kAsyncCopy) {
    if (!pack_ || !unpack_) throw ConfigError("packed entry needs both pack and unpack");
    if (size_ == 0) throw ConfigError("packed size must be positive");
    if (copy_mode_) update();
  }

  void update() override {
    if (copy_mode_) {
      shadow_.clear();
      pack_(shadow_);
      check_size(shadow_);
    }
  }

  void write(const std::string& path) const override {
    std::vector<std::uint8_t> staged;
    if (!copy_mode_) {
      pack_(staged);
      check_size(staged);
    }
    const std::vector<std::uint8_t>& src = copy_mode_ ? shadow_ : staged;
    write_file_bytes(path, encode_entry(header(), src));
  }

  void read(const std::string& path) override {
    std::vector<std::uint8_t> payload;
    const EntryHeader h = decode_entry(read_file_bytes(path), payload);
    require_entry_shape(h, header(), path);
    unpack_(payload);
  }

  bool has_shadow() const override { return copy_mode_; }

 private:
  EntryHeader header() const {
    return EntryHeader{EntryKind::kPacked, ElementType::kByte, size_, 0, 0};
  }

  void check_size(const std::vector<std::uint8_t>& b) const {
    if (b.size() != size_) {
      throw ConfigError("pack produced " + std::to_string(b.size()) + " bytes, declared " +
                        std::to_string(size_));
    }
  }

  PackFn pack_;
  UnpackFn unpack_;
  std::uint64_t size_;
  bool copy_mode_;
  std::vector<std::uint8_t> shadow_;
};

// Adapter for user-defined types given as three callables. update may be
// empty; such an entry is rejected at commit time when async-copy mode is
// active, since nothing would snapshot the data.
class CustomEntry final : public Checkpointable {
 public:
  using IoFn = std::function<void(const std::string&)>;
  using UpdateFn = std::function<void()>;

  CustomEntry(IoFn read, IoFn write, UpdateFn update)
      : read_(std::move(read)), write_(std::move(write)), update_(std::move(update)) {
    if (!read_ || !write_) throw ConfigError("custom entry needs read and write functions");
  }

  void update() override {
    if (update_) update_();
  }
  void write(const std::string& path) const override { write_(path); }
  void read(const std::string& path) override { read_(path); }
  bool has_shadow() const override { return static_cast<bool>(update_); }

 private:
  IoFn read_;
  IoFn write_;
  UpdateFn update_;
};

inline std::shared_ptr<Checkpointable> make_custom_entry(CustomEntry::IoFn read,
                                                         CustomEntry::IoFn write,
                                                         CustomEntry::UpdateFn update = nullptr) {
  return std::make_shared<CustomEntry>(std::move(read), std::move(write), std::move(update));
}

}  // namespace craftkit

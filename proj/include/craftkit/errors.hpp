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

#include <stdexcept>
#include <string>
#include <vector>

namespace craftkit {

// Base of everything this library throws.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad user input: invalid names, duplicate keys, add-after-commit, bad
// frequency values, missing update() in async-copy mode, ...
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failures in the version store.
class StorageError : public Error {
 public:
  using Error::Error;
};

// Entry bytes do not match the target entry (wrong type tag / dimensions).
class TypeMismatchError : public Error {
 public:
  using Error::Error;
};

// Checksum mismatch while reading back checkpoint data.
class CorruptionError : public StorageError {
 public:
  using StorageError::StorageError;
};

// A peer process failed. Carries the transport-level endpoint ids that were
// observed dead. Caught by the AFT zone loop, never by application bodies.
class ProcFailedError : public Error {
 public:
  explicit ProcFailedError(std::vector<int> failed)
      : Error("process failure detected"), failed_(std::move(failed)) {}
  const std::vector<int>& failed() const { return failed_; }

 private:
  std::vector<int> failed_;
};

// The group was revoked by some member; pending and future operations on the
// group abort with this until the group is rebuilt.
class RevokedError : public Error {
 public:
  RevokedError() : Error("group revoked") {}
};

// Non-shrinking recovery could not place replacement processes.
class SpawnCapacityError : public Error {
 public:
  using Error::Error;
};

// The whole group is lost; the zone cannot make progress.
class FatalZoneError : public Error {
 public:
  using Error::Error;
};

}  // namespace craftkit

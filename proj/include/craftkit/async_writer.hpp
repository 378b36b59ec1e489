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

#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace craftkit {

enum class JobState { kPending, kDone, kFailed };

struct JobResult {
  JobState state = JobState::kPending;
  std::string error;
};

// Handle to one background write. await() blocks until the job reached a
// terminal state and may be called any number of times.
class JobHandle {
 public:
  JobHandle() = default;

  JobResult await() const;
  bool valid() const { return static_cast<bool>(state_); }

  // A handle that is already done, for work executed inline.
  static JobHandle completed();

 private:
  friend class AsyncWriter;

  struct State {
    std::mutex mu;
    std::condition_variable cv;
    JobState state = JobState::kPending;
    std::string error;
  };

  explicit JobHandle(std::shared_ptr<State> s) : state_(std::move(s)) {}
  std::shared_ptr<State> state_;
};

// One background worker owned by one checkpoint. The thread starts lazily at
// the first submit and runs jobs in submission order; jobs touch only the
// storage layer and data they own, never the process group.
class AsyncWriter {
 public:
  AsyncWriter() = default;
  ~AsyncWriter();

  AsyncWriter(const AsyncWriter&) = delete;
  AsyncWriter& operator=(const AsyncWriter&) = delete;

  JobHandle submit(std::function<void()> job);

 private:
  void run();

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<std::function<void()>, std::shared_ptr<JobHandle::State>>> queue_;
  bool stop_ = false;
  std::thread worker_;
  bool started_ = false;
};

}  // namespace craftkit

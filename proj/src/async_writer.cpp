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

#include "craftkit/async_writer.hpp"

#include <exception>

namespace craftkit {

JobResult JobHandle::await() const {
  if (!state_) return {JobState::kDone, ""};
  std::unique_lock<std::mutex> lk(state_->mu);
  state_->cv.wait(lk, [&] { return state_->state != JobState::kPending; });
  return {state_->state, state_->error};
}

JobHandle JobHandle::completed() {
  auto s = std::make_shared<State>();
  s->state = JobState::kDone;
  return JobHandle(std::move(s));
}

AsyncWriter::~AsyncWriter() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

JobHandle AsyncWriter::submit(std::function<void()> job) {
  auto state = std::make_shared<JobHandle::State>();
  {
    std::lock_guard<std::mutex> lk(mu_);
    queue_.emplace_back(std::move(job), state);
    if (!started_) {
      worker_ = std::thread([this] { run(); });
      started_ = true;
    }
  }
  cv_.notify_all();
  return JobHandle(std::move(state));
}

void AsyncWriter::run() {
  for (;;) {
    std::pair<std::function<void()>, std::shared_ptr<JobHandle::State>> item;
    {
      std::unique_lock<std::mutex> lk(mu_);
      cv_.wait(lk, [&] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;  // stop requested and drained
      item = std::move(queue_.front());
      queue_.pop_front();
    }
    JobState result = JobState::kDone;
    std::string error;
    try {
      item.first();
    } catch (const std::exception& e) {
      result = JobState::kFailed;
      error = e.what();
    } catch (...) {
      result = JobState::kFailed;
      error = "unknown failure in background write";
    }
    {
      std::lock_guard<std::mutex> lk(item.second->mu);
      item.second->state = result;
      item.second->error = error;
    }
    item.second->cv.notify_all();
  }
}

}  // namespace craftkit

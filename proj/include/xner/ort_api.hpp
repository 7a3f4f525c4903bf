// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal binding to the ONNX Runtime C API, resolved at run time with
// dlopen so the library builds without ONNX Runtime headers or link-time
// dependencies. Only the leading, append-only part of the OrtApi function
// table that this project calls is declared; slot indices follow the
// upstream onnxruntime_c_api.h (API version 17 and later).

#pragma once

#include <dlfcn.h>

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "xner/error.hpp"

namespace xner::ort {

struct OrtStatus;
struct OrtEnv;
struct OrtSession;
struct OrtSessionOptions;
struct OrtValue;
struct OrtRunOptions;
struct OrtMemoryInfo;
struct OrtAllocator;
struct OrtTensorTypeAndShapeInfo;

inline constexpr std::uint32_t kApiVersion = 17;

enum LoggingLevel : int { kLogVerbose = 0, kLogInfo, kLogWarning, kLogError, kLogFatal };
enum ElementType : int { kFloat = 1, kInt64 = 7 };
enum AllocatorType : int { kDeviceAllocator = 0, kArenaAllocator = 1 };
enum MemType : int { kMemTypeDefault = 0 };
enum GraphOptimizationLevel : int { kDisableAll = 0, kEnableBasic = 1, kEnableExtended = 2, kEnableAll = 99 };

using Status = OrtStatus*;
using Unused = void (*)();

struct Api {
  Status (*CreateStatus)(int, const char*);                                                  // 0
  int (*GetErrorCode)(const OrtStatus*);                                                     // 1
  const char* (*GetErrorMessage)(const OrtStatus*);                                          // 2
  Status (*CreateEnv)(LoggingLevel, const char*, OrtEnv**);                                  // 3
  Unused CreateEnvWithCustomLogger;                                                          // 4
  Unused EnableTelemetryEvents;                                                              // 5
  Status (*DisableTelemetryEvents)(const OrtEnv*);                                           // 6
  Status (*CreateSession)(const OrtEnv*, const char*, const OrtSessionOptions*, OrtSession**);  // 7
  Unused CreateSessionFromArray;                                                             // 8
  Status (*Run)(OrtSession*, const OrtRunOptions*, const char* const*, const OrtValue* const*, std::size_t,
                const char* const*, std::size_t, OrtValue**);                                 // 9
  Status (*CreateSessionOptions)(OrtSessionOptions**);                                       // 10
  Unused unused_11_22[12];                                                                   // 11-22
  Status (*SetSessionGraphOptimizationLevel)(OrtSessionOptions*, GraphOptimizationLevel);    // 23
  Status (*SetIntraOpNumThreads)(OrtSessionOptions*, int);                                   // 24
  Status (*SetInterOpNumThreads)(OrtSessionOptions*, int);                                   // 25
  Unused unused_26_29[4];                                                                    // 26-29
  Status (*SessionGetInputCount)(const OrtSession*, std::size_t*);                           // 30
  Status (*SessionGetOutputCount)(const OrtSession*, std::size_t*);                          // 31
  Unused unused_32_35[4];                                                                    // 32-35
  Status (*SessionGetInputName)(const OrtSession*, std::size_t, OrtAllocator*, char**);      // 36
  Status (*SessionGetOutputName)(const OrtSession*, std::size_t, OrtAllocator*, char**);     // 37
  Unused unused_38_48[11];                                                                   // 38-48
  Status (*CreateTensorWithDataAsOrtValue)(const OrtMemoryInfo*, void*, std::size_t, const std::int64_t*,
                                           std::size_t, ElementType, OrtValue**);             // 49
  Unused IsTensor;                                                                           // 50
  Status (*GetTensorMutableData)(OrtValue*, void**);                                         // 51
  Unused unused_52_60[9];                                                                    // 52-60
  Status (*GetDimensionsCount)(const OrtTensorTypeAndShapeInfo*, std::size_t*);              // 61
  Status (*GetDimensions)(const OrtTensorTypeAndShapeInfo*, std::int64_t*, std::size_t);     // 62
  Unused GetSymbolicDimensions;                                                              // 63
  Unused GetTensorShapeElementCount;                                                         // 64
  Status (*GetTensorTypeAndShape)(const OrtValue*, OrtTensorTypeAndShapeInfo**);             // 65
  Unused unused_66_68[3];                                                                    // 66-68
  Status (*CreateCpuMemoryInfo)(AllocatorType, MemType, OrtMemoryInfo**);                    // 69
  Unused unused_70_75[6];                                                                    // 70-75
  Status (*AllocatorFree)(OrtAllocator*, void*);                                             // 76
  Unused AllocatorGetInfo;                                                                   // 77
  Status (*GetAllocatorWithDefaultOptions)(OrtAllocator**);                                  // 78
  Unused unused_79_91[13];                                                                   // 79-91
  void (*ReleaseEnv)(OrtEnv*);                                                               // 92
  void (*ReleaseStatus)(OrtStatus*);                                                         // 93
  void (*ReleaseMemoryInfo)(OrtMemoryInfo*);                                                 // 94
  void (*ReleaseSession)(OrtSession*);                                                       // 95
  void (*ReleaseValue)(OrtValue*);                                                           // 96
  void (*ReleaseRunOptions)(OrtRunOptions*);                                                 // 97
  Unused ReleaseTypeInfo;                                                                    // 98
  void (*ReleaseTensorTypeAndShapeInfo)(OrtTensorTypeAndShapeInfo*);                         // 99
  void (*ReleaseSessionOptions)(OrtSessionOptions*);                                         // 100
};

static_assert(offsetof(Api, Run) == 9 * sizeof(void*));
static_assert(offsetof(Api, SetSessionGraphOptimizationLevel) == 23 * sizeof(void*));
static_assert(offsetof(Api, SessionGetInputName) == 36 * sizeof(void*));
static_assert(offsetof(Api, CreateTensorWithDataAsOrtValue) == 49 * sizeof(void*));
static_assert(offsetof(Api, GetDimensionsCount) == 61 * sizeof(void*));
static_assert(offsetof(Api, CreateCpuMemoryInfo) == 69 * sizeof(void*));
static_assert(offsetof(Api, GetAllocatorWithDefaultOptions) == 78 * sizeof(void*));
static_assert(offsetof(Api, ReleaseEnv) == 92 * sizeof(void*));
static_assert(offsetof(Api, ReleaseSessionOptions) == 100 * sizeof(void*));

struct ApiBase {
  const Api* (*GetApi)(std::uint32_t version);
  const char* (*GetVersionString)();
};

// Loaded runtime: the shared library, its API table and one process-wide env.
class Runtime {
 public:
  const Api& api() const { return *api_; }
  OrtEnv* env() const { return env_; }
  const std::string& version() const { return version_; }
  const std::string& library() const { return library_; }

  void check(Status s, const std::string& what) const {
    if (s == nullptr) return;
    std::string msg = api_->GetErrorMessage(s);
    api_->ReleaseStatus(s);
    throw ProviderError("onnxruntime: " + what + ": " + msg);
  }

  // Library path resolution order: explicit argument, XNER_ONNXRUNTIME_LIB,
  // the build-time default, then the dynamic loader's search path. One
  // runtime per library path is kept for the life of the process.
  static std::shared_ptr<const Runtime> load(const std::string& requested = {}) {
    std::string path = requested;
    if (path.empty()) {
      if (const char* env = std::getenv("XNER_ONNXRUNTIME_LIB")) path = env;
    }
#ifdef XNER_DEFAULT_ONNXRUNTIME_LIB
    if (path.empty()) path = XNER_DEFAULT_ONNXRUNTIME_LIB;
#endif
    if (path.empty()) path = "libonnxruntime.so";

    static std::mutex mu;
    static std::vector<std::shared_ptr<const Runtime>> loaded;
    std::lock_guard lock(mu);
    for (const auto& r : loaded)
      if (r->library_ == path) return r;
    std::shared_ptr<Runtime> rt(new Runtime());
    rt->library_ = path;
    rt->handle_ = dlopen(path.c_str(), RTLD_NOW | RTLD_LOCAL);
    if (rt->handle_ == nullptr) throw ProviderError("cannot load ONNX Runtime from '" + path + "': " + dlerror());
    auto get_base = reinterpret_cast<const ApiBase* (*)(std::uint32_t)>(dlsym(rt->handle_, "OrtGetApiBase"));
    if (get_base == nullptr) throw ProviderError("'" + path + "' does not export OrtGetApiBase");
    const ApiBase* base = get_base(kApiVersion);
    rt->version_ = base->GetVersionString();
    rt->api_ = base->GetApi(kApiVersion);
    if (rt->api_ == nullptr)
      throw ProviderError("ONNX Runtime " + rt->version_ + " does not provide API version " +
                          std::to_string(kApiVersion));
    rt->check(rt->api_->CreateEnv(kLogError, "xner", &rt->env_), "CreateEnv");
    rt->api_->DisableTelemetryEvents(rt->env_);
    loaded.push_back(rt);
    return rt;
  }

  ~Runtime() {
    if (env_ != nullptr) api_->ReleaseEnv(env_);
    // The library stays mapped: ONNX Runtime does not support unloading.
  }

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

 private:
  Runtime() = default;

  void* handle_ = nullptr;
  const Api* api_ = nullptr;
  OrtEnv* env_ = nullptr;
  std::string version_;
  std::string library_;
};

// Owning handle for an OrtValue.
class Value {
 public:
  Value(const Api& api, OrtValue* v) : api_(&api), v_(v) {}
  Value(Value&& o) noexcept : api_(o.api_), v_(o.v_) { o.v_ = nullptr; }
  Value& operator=(Value&& o) noexcept {
    std::swap(api_, o.api_);
    std::swap(v_, o.v_);
    return *this;
  }
  Value(const Value&) = delete;
  Value& operator=(const Value&) = delete;
  ~Value() {
    if (v_ != nullptr) api_->ReleaseValue(v_);
  }
  OrtValue* get() const { return v_; }

 private:
  const Api* api_;
  OrtValue* v_;
};

}  // namespace xner::ort

// Copyright 2026 The prosoflow Authors
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

#include "prosoflow/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace prosoflow {

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'O', 'N', '0', '1', '\n'};

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_str(std::string& s, const std::string& v) {
  put_u64(s, v.size());
  s += v;
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError("container truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string v = buf.substr(pos, n);
    pos += n;
    return v;
  }
};

}  // namespace

const Mat* Container::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

void Container::add(const std::string& name, Mat value) {
  tensors.push_back({name, std::move(value)});
}

void write_container(const std::string& path, const Container& c) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_str(out, c.kind);
  put_u32(out, c.version);
  put_str(out, c.meta_json);
  put_u64(out, c.tensors.size());
  for (const auto& t : c.tensors) {
    put_str(out, t.name);
    put_u64(out, static_cast<std::uint64_t>(t.value.rows()));
    put_u64(out, static_cast<std::uint64_t>(t.value.cols()));
    const std::size_t bytes = static_cast<std::size_t>(t.value.size()) * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, t.value.data(), bytes);
  }
  put_u64(out, fnv1a64(out.data(), out.size()));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write container: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

Container read_container(const std::string& path, const std::string& kind,
                         std::uint32_t version) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open container: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 8 ||
      std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a prosoflow container: " + path);
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[body + i]))
              << (8 * i);
  if (fnv1a64(buf.data(), body) != stored)
    throw IoError("container integrity check failed (truncated or corrupt): " +
                  path);

  Reader r(buf);
  r.pos = sizeof(kMagic);
  Container c;
  c.kind = r.str();
  c.version = r.u32();
  if (c.kind != kind)
    throw ValidationError("container kind '" + c.kind + "' != expected '" +
                          kind + "': " + path);
  if (c.version != version)
    throw ValidationError("container version " + std::to_string(c.version) +
                          " != expected " + std::to_string(version) + ": " + path);
  c.meta_json = r.str();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    Container::Tensor t;
    t.name = r.str();
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    const std::size_t bytes = rows * cols * sizeof(double);
    r.need(bytes);
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::memcpy(t.value.data(), buf.data() + r.pos, bytes);
    r.pos += bytes;
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void save_checkpoint(const std::string& path, const std::string& kind,
                     const TrainState& state, const std::string& meta_json) {
  Container c;
  c.kind = kind;
  c.version = kCheckpointVersion;
  c.meta_json = meta_json;
  for (const auto& e : state.params->entries())
    c.add("param/" + e.name, e.v->val);
  if (state.opt) {
    const auto& entries = state.params->entries();
    for (std::size_t i = 0; i < state.opt->m.size() && i < entries.size(); ++i) {
      c.add("adam/m/" + entries[i].name, state.opt->m[i]);
      c.add("adam/v/" + entries[i].name, state.opt->v[i]);
    }
    c.add("adam/step", Mat::Constant(1, 1, static_cast<double>(state.opt->step_count)));
  }
  if (state.rng) {
    const auto st = state.rng->state();
    // Split into 32-bit words; doubles cannot hold u64 exactly.
    Mat words(2, 4);
    for (int i = 0; i < 4; ++i) {
      words(0, i) = static_cast<double>(st[i] >> 32);
      words(1, i) = static_cast<double>(st[i] & 0xffffffffull);
    }
    c.add("rng/state_words", words);
  }
  c.add("meta/step", Mat::Constant(1, 1, static_cast<double>(state.step)));
  write_container(path, c);
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::string& kind, TrainState state) {
  Container c = read_container(path, kind, kCheckpointVersion);
  for (auto& e : state.params->entries()) {
    const Mat* v = c.find("param/" + e.name);
    if (!v)
      throw ValidationError("checkpoint missing parameter '" + e.name + "': " + path);
    if (v->rows() != e.v->val.rows() || v->cols() != e.v->val.cols())
      throw ValidationError("checkpoint shape mismatch for '" + e.name + "': " + path);
    e.v->val = *v;
  }
  if (state.opt) {
    state.opt->init(*state.params);
    const auto& entries = state.params->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const Mat* m = c.find("adam/m/" + entries[i].name);
      const Mat* v = c.find("adam/v/" + entries[i].name);
      if (m) state.opt->m[i] = *m;
      if (v) state.opt->v[i] = *v;
    }
    if (const Mat* s = c.find("adam/step"))
      state.opt->step_count = static_cast<long long>((*s)(0, 0));
  }
  if (state.rng) {
    if (const Mat* w = c.find("rng/state_words")) {
      std::array<std::uint64_t, 4> st{};
      for (int i = 0; i < 4; ++i)
        st[i] = (static_cast<std::uint64_t>((*w)(0, i)) << 32) |
                static_cast<std::uint64_t>((*w)(1, i));
      state.rng->set_state(st);
    }
  }
  LoadedCheckpoint out;
  if (const Mat* s = c.find("meta/step"))
    out.step = static_cast<long long>((*s)(0, 0));
  out.meta_json = c.meta_json;
  return out;
}

}  // namespace prosoflow

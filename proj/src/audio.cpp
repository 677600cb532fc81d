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

#include "prosoflow/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "prosoflow/common.hpp"

namespace prosoflow {

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 44 || std::memcmp(p, "RIFF", 4) != 0 ||
      std::memcmp(p + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path);

  WavData wav;
  int channels = 0, bits = 0;
  std::size_t pos = 12;
  bool got_fmt = false, got_data = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t sz = get_u32(p + pos + 4);
    const char* tag = bytes.data() + pos;
    const std::size_t body = pos + 8;
    if (std::memcmp(tag, "fmt ", 4) == 0 && body + 16 <= bytes.size()) {
      const std::uint16_t fmt = get_u16(p + body);
      channels = get_u16(p + body + 2);
      wav.sample_rate = static_cast<int>(get_u32(p + body + 4));
      bits = get_u16(p + body + 14);
      if (fmt != 1) throw IoError("wav: only PCM supported: " + path);
      got_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!got_fmt) throw IoError("wav: data chunk before fmt: " + path);
      if (channels != 1 || bits != 16)
        throw IoError("wav: expected mono 16-bit PCM: " + path);
      const std::size_t n = std::min<std::size_t>(sz, bytes.size() - body) / 2;
      wav.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t v =
            static_cast<std::int16_t>(get_u16(p + body + 2 * i));
        wav.samples[i] = v / 32768.0;
      }
      got_data = true;
      break;
    }
    pos = body + sz + (sz & 1);
  }
  if (!got_data) throw IoError("wav: missing data chunk: " + path);
  return wav;
}

void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (const double s : samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    const int v = std::clamp(static_cast<int>(std::lround(clamped * 32768.0)),
                             -32768, 32767);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write wav: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

}  // namespace prosoflow

// Copyright 2026 The moperturb Authors
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

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include <unistd.h>

#include <json.hpp>

#include "moperturb/core.hpp"

namespace moperturb {

namespace fs = std::filesystem;

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a sibling temporary and renames it into place.
inline void write_text_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error(Errc::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(Errc::io, "cannot rename into " + path.string() + ": " + ec.message());
  }
}

inline nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
}

/// A non-negative integer field. nlohmann stores literals as signed and
/// parsed text as unsigned, so both are accepted.
inline std::uint64_t json_count(const nlohmann::json& v, const std::string& field) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw Error(Errc::parse, "field '" + field + "' must be a non-negative integer");
}

inline void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  write_text_atomic(path, j.dump(1) + "\n");
}

/// Nested [frame][joint][axis] arrays.
inline nlohmann::json pose_to_json(const PoseTensor& x) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < x.frames(); ++t) {
    nlohmann::json joints = nlohmann::json::array();
    for (std::size_t j = 0; j < x.joints(); ++j) {
      const Vec3 v = x.joint(t, j);
      joints.push_back({v[0], v[1], v[2]});
    }
    frames.push_back(std::move(joints));
  }
  return frames;
}

/// Parses nested frame arrays; every frame must carry `joints` joints (or as
/// many as the first frame when `joints` is 0).
inline PoseTensor pose_from_json(const nlohmann::json& frames, const std::string& field,
                                 std::size_t joints = 0) {
  if (!frames.is_array() || frames.empty())
    throw Error(Errc::parse, "field '" + field + "' must be a non-empty array of frames");
  if (joints == 0) {
    if (!frames[0].is_array())
      throw Error(Errc::parse, "field '" + field + "' frame 0 is not an array");
    joints = frames[0].size();
  }
  PoseTensor out(frames.size(), joints);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& f = frames[t];
    if (!f.is_array())
      throw Error(Errc::parse, "field '" + field + "' frame " + std::to_string(t) + " is not an array");
    if (f.size() != joints)
      throw Error(Errc::validation, "field '" + field + "' frame " + std::to_string(t) + " has " +
                                        std::to_string(f.size()) + " joints, expected " +
                                        std::to_string(joints));
    for (std::size_t j = 0; j < joints; ++j) {
      const auto& p = f[j];
      if (!p.is_array() || p.size() != 3)
        throw Error(Errc::parse, "field '" + field + "' frame " + std::to_string(t) + " joint " +
                                     std::to_string(j) + " is not an [x, y, z] triple");
      for (std::size_t a = 0; a < 3; ++a) {
        if (!p[a].is_number())
          throw Error(Errc::parse, "field '" + field + "' frame " + std::to_string(t) +
                                       " joint " + std::to_string(j) + " has a non-numeric coordinate");
        out(t, j, a) = p[a].get<double>();
      }
    }
  }
  return out;
}

}  // namespace moperturb

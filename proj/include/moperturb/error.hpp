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

#include <stdexcept>
#include <string>
#include <string_view>

namespace moperturb {

enum class Errc {
  invalid_order,
  connectivity,
  shape,
  range,
  undefined_rate,
  division,
  degenerate_scale,
  numeric_failure,
  insufficient_history,
  empty_input,
  missing_partition,
  parse,
  validation,
  config,
  io,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_order: return "invalid-order";
    case Errc::connectivity: return "connectivity";
    case Errc::shape: return "shape";
    case Errc::range: return "range";
    case Errc::undefined_rate: return "undefined-rate";
    case Errc::division: return "division";
    case Errc::degenerate_scale: return "degenerate-scale";
    case Errc::numeric_failure: return "numeric-failure";
    case Errc::insufficient_history: return "insufficient-history";
    case Errc::empty_input: return "empty-input";
    case Errc::missing_partition: return "missing-partition";
    case Errc::parse: return "parse";
    case Errc::validation: return "validation";
    case Errc::config: return "config";
    case Errc::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + " error: " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace moperturb

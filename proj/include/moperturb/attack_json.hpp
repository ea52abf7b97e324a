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

// JSON forms of AttackConfig and AttackResult.
//
// AttackConfig:
//   {"epsilon", "step_factor", "iterations", "lambda", "n_order",
//    "constraint_mode": "none"|"temporal_only"|"bone_only"|"both",
//    "frame_mask": [..] | null, "seed", "absolute_bound": x | null,
//    "signed_bone_loss": bool}
// Missing keys keep their defaults.
//
// AttackResult:
//   {"scale": x | null, "bound", "step", "adversarial": [[[x,y,z]]],
//    "perturbation": [[[x,y,z]]],
//    "loss_trace": {"total": [..], "pred": [..], "temp": [..], "bl": [..]},
//    "final_loss": {"total", "pred", "temp", "bl"}}

#pragma once

#include <string>

#include <json.hpp>

#include "moperturb/attack.hpp"
#include "moperturb/io.hpp"

namespace moperturb {

inline nlohmann::json attack_config_to_json(const AttackConfig& c) {
  nlohmann::json j;
  j["epsilon"] = c.epsilon;
  j["step_factor"] = c.step_factor;
  j["iterations"] = c.iterations;
  j["lambda"] = c.lambda;
  j["n_order"] = c.n_order;
  j["constraint_mode"] = std::string(to_string(c.constraint_mode));
  j["frame_mask"] = c.frame_mask ? nlohmann::json(*c.frame_mask) : nlohmann::json(nullptr);
  j["seed"] = c.seed;
  j["absolute_bound"] = c.absolute_bound ? nlohmann::json(*c.absolute_bound) : nlohmann::json(nullptr);
  j["signed_bone_loss"] = c.signed_bone_loss;
  return j;
}

inline AttackConfig attack_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::parse, "attack config must be a JSON object");
  AttackConfig c;
  try {
    if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
    if (j.contains("step_factor")) c.step_factor = j["step_factor"].get<double>();
    if (j.contains("iterations")) c.iterations = json_count(j["iterations"], "iterations");
    if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
    if (j.contains("n_order")) c.n_order = json_count(j["n_order"], "n_order");
    if (j.contains("constraint_mode"))
      c.constraint_mode = parse_constraint_mode(j["constraint_mode"].get<std::string>());
    if (j.contains("frame_mask") && !j["frame_mask"].is_null()) {
      if (!j["frame_mask"].is_array()) throw Error(Errc::parse, "field 'frame_mask' must be an array");
      std::vector<std::size_t> mask;
      for (const auto& v : j["frame_mask"]) mask.push_back(json_count(v, "frame_mask"));
      c.frame_mask = std::move(mask);
    }
    if (j.contains("seed")) c.seed = json_count(j["seed"], "seed");
    if (j.contains("absolute_bound") && !j["absolute_bound"].is_null())
      c.absolute_bound = j["absolute_bound"].get<double>();
    if (j.contains("signed_bone_loss")) c.signed_bone_loss = j["signed_bone_loss"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse, std::string("attack config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json attack_result_to_json(const AttackResult& r) {
  nlohmann::json j;
  j["scale"] = r.scale ? nlohmann::json(*r.scale) : nlohmann::json(nullptr);
  j["bound"] = r.bound;
  j["step"] = r.step;
  j["adversarial"] = pose_to_json(r.adversarial);
  j["perturbation"] = pose_to_json(r.perturbation);
  j["loss_trace"] = {{"total", r.trace.total},
                     {"pred", r.trace.pred},
                     {"temp", r.trace.temp},
                     {"bl", r.trace.bl}};
  j["final_loss"] = {{"total", r.final_loss.total},
                     {"pred", r.final_loss.pred},
                     {"temp", r.final_loss.temp},
                     {"bl", r.final_loss.bl}};
  return j;
}

inline AttackResult attack_result_from_json(const nlohmann::json& j) {
  AttackResult r;
  try {
    if (!j.at("scale").is_null()) r.scale = j["scale"].get<double>();
    r.bound = j.at("bound").get<double>();
    r.step = j.at("step").get<double>();
    r.adversarial = pose_from_json(j.at("adversarial"), "adversarial");
    r.perturbation = pose_from_json(j.at("perturbation"), "perturbation", r.adversarial.joints());
    const auto& t = j.at("loss_trace");
    r.trace.total = t.at("total").get<std::vector<double>>();
    r.trace.pred = t.at("pred").get<std::vector<double>>();
    r.trace.temp = t.at("temp").get<std::vector<double>>();
    r.trace.bl = t.at("bl").get<std::vector<double>>();
    const auto& f = j.at("final_loss");
    r.final_loss = {f.at("total").get<double>(), f.at("pred").get<double>(),
                    f.at("temp").get<double>(), f.at("bl").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse, std::string("attack result: ") + e.what());
  }
  return r;
}

}  // namespace moperturb

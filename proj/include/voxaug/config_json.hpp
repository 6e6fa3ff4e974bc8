#pragma once

#include <nlohmann/json.hpp>

#include "voxaug/inject.hpp"
#include "voxaug/train.hpp"

namespace voxaug {

// JSON round-trips for the run configurations. Unknown keys are rejected so
// config typos fail loudly; absent keys keep defaults.
void to_json(nlohmann::json& j, const RegistrationConfig& c);
void from_json(const nlohmann::json& j, RegistrationConfig& c);

void to_json(nlohmann::json& j, const RigidOptions& o);
void from_json(const nlohmann::json& j, RigidOptions& o);

void to_json(nlohmann::json& j, const InjectionConfig& c);
void from_json(const nlohmann::json& j, InjectionConfig& c);

// Short content hash of a config's canonical JSON, recorded in provenance.
std::string config_hash(const nlohmann::json& j);

}  // namespace voxaug

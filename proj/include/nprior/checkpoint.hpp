#pragma once

#include <string>

#include <json.hpp>

#include "nprior/optim.hpp"

namespace nprior {

// Flat binary checkpoint. Per parameter, in ParamSet order:
//   u32 name length (LE), name bytes, u8 dtype tag (0 = f64),
//   u32 rank (LE), u32 extents[rank] (LE), f64 payload (LE).
// A JSON manifest at <path>.json lists the parameter order and carries the
// caller's extra metadata under "meta".
void save_checkpoint(const ParamSet& params, const std::string& path,
                     const nlohmann::json& meta);
void save_checkpoint(const ParamSet& params, const std::string& path);

// Loads into an existing ParamSet; names and shapes must match exactly.
// Returns the manifest JSON.
nlohmann::json load_checkpoint(ParamSet& params, const std::string& path);

// Reads every record into a fresh ParamSet.
ParamSet load_checkpoint_all(const std::string& path);

// Convenience: manifest metadata without touching tensors.
nlohmann::json read_checkpoint_meta(const std::string& path);

}  // namespace nprior

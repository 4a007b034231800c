#pragma once

#include <iosfwd>
#include <string>

#include "json.hpp"
#include "pyrhead/head.hpp"
#include "pyrhead/synth.hpp"

namespace pyrhead::io {

using Json = nlohmann::json;

/// Parses JSON text. Syntax errors become FormatError carrying the line and
/// column of the offending byte.
Json parse_json(const std::string& text, const std::string& source = "<input>");
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

Json to_json(const Box3D& b);
Box3D box_from_json(const Json& j);

/// {"anchor_mode": "center", "levels": [{"grid": [6,6,6], "ratios": [1,1,1],
/// "max_neighbors": 8, "r_pre": 0.8}, ...]}
Json to_json(const PyramidConfig& cfg);
PyramidConfig pyramid_config_from_json(const Json& j);

/// Head config; every key is optional and defaults to HeadConfig::standard().
/// schema_version must equal kHeadConfigSchemaVersion when present.
Json to_json(const HeadConfig& cfg);
HeadConfig head_config_from_json(const Json& j);
HeadConfig load_head_config(const std::string& path);

/// Binary point set: "PSET", u32 n, u32 d, n*3 f32 coords, n*d f32 features,
/// little-endian.
void write_point_set(std::ostream& os, const PointSet& ps);
PointSet read_point_set(std::istream& is);
void save_point_set(const std::string& path, const PointSet& ps);
PointSet load_point_set(const std::string& path);

/// Text form for small fixtures: {"coords": [[x,y,z],...], "feats": [[...],...]}.
Json to_json(const PointSet& ps);
PointSet point_set_from_json(const Json& j);

/// Named-tensor container: "PYRHCKPT", u32 version, u32 count, then per
/// tensor u32 name length, name, u32 rank, u64 dims, f64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void write_checkpoint(std::ostream& os, const num::ParameterSet& params);
/// Loads every tensor of the stream into the parameter with the same name;
/// names or shapes that do not match raise FormatError.
void read_checkpoint(std::istream& is, num::ParameterSet& params);
void save_checkpoint(const std::string& path, const num::ParameterSet& params);
void load_checkpoint(const std::string& path, num::ParameterSet& params);

/// Scene as `<prefix>.pset` plus a `<prefix>.json` sidecar with objects,
/// proposals, targets and proposal kinds.
Json scene_sidecar(const Scene& s);
void save_scene(const std::string& prefix, const Scene& s);
Scene load_scene(const std::string& prefix);

}  // namespace pyrhead::io

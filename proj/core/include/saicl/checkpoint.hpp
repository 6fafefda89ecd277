#pragma once

#include <string>

#include <json.hpp>

#include "saicl/config.hpp"
#include "saicl/encoder.hpp"

namespace saicl {

// Self-describing model container: a JSON header carrying the encoder config,
// feature schema, task, head kind and the resolved run config, followed by
// the named parameter/buffer arrays as raw little-endian doubles. Round-trips
// are bit-exact.
struct Checkpoint {
    EncoderConfig encoder;
    FeatureSchema schema;
    TaskKind task;
    HeadKind head = HeadKind::SharedItem;
    nlohmann::json run_config;
    ParamStore store;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Throws "checkpoint_not_found" when the file is missing and
// "checkpoint_corrupt" on malformed content.
Checkpoint load_checkpoint(const std::string& path);

} // namespace saicl

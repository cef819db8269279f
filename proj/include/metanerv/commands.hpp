#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "metanerv/loss.hpp"
#include "metanerv/meta.hpp"
#include "metanerv/model.hpp"
#include "metanerv/video.hpp"

namespace metanerv {

using Json = nlohmann::json;

/// Config-block codecs. Parsers reject unknown keys so a typo cannot
/// silently fall back to a default.
ModelConfig model_from_json(const Json& j);
LossConfig loss_from_json(const Json& j);
MetaConfig meta_from_json(const Json& j, const Json& loss_block);
Json json_from_model(const ModelConfig& cfg);

/// Videos of one split ("train"/"test") from a dataset directory: reads
/// manifest.json when present, else every *.mnvr in the directory sorted by
/// name.
std::vector<Video> load_dataset(const std::string& dir, const std::string& split);

/// Commands. Each consumes the merged config (file plus flag overrides),
/// writes its artifacts plus an optional JSON report ("report" key), and
/// returns the report. The effective config is echoed in the report; the
/// timestamp lives in its own field so reports are otherwise reproducible.
Json cmd_gen_dataset(const Json& cfg);
Json cmd_meta_train(const Json& cfg);
Json cmd_adapt(const Json& cfg);
Json cmd_compress(const Json& cfg);
Json cmd_decompress(const Json& cfg);
Json cmd_denoise_eval(const Json& cfg);

/// Full argv entry point: parse, merge overrides, dispatch, print the report
/// to stdout. Returns the process exit code (0 iff the command and all of
/// its writes succeeded).
int run_cli(int argc, const char* const* argv);

} // namespace metanerv

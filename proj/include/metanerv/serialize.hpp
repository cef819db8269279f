#pragma once

#include <string>
#include <vector>

#include "metanerv/meta.hpp"
#include "metanerv/model.hpp"

namespace metanerv {

/// On-disk model state, container magic "MNRV1". theta always holds
/// param_count(model) values; beta is either the same length (meta-trained
/// checkpoints) or empty (plain fitted models). Optimizer state and the outer
/// iteration counter travel only when has_meta is set, which is what makes a
/// checkpoint resumable.
struct Checkpoint {
    ModelConfig model;
    std::vector<double> theta;
    std::vector<double> beta;
    bool has_meta = false;
    int64_t outer_iter = 0;
    AdamState opt_theta;
    AdamState opt_beta;

    void validate() const;
};

Checkpoint checkpoint_from_state(const MetaState& state);

/// Inverse of checkpoint_from_state; throws DomainError when the checkpoint
/// carries no meta state.
MetaState state_from_checkpoint(const Checkpoint& ckpt);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Whole-file helpers shared by the containers and the CLI.
std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

} // namespace metanerv

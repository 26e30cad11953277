#pragma once

#include <cstdint>
#include <string_view>

namespace spg {

/// Reward granularity of a task: one unit per image, per pixel and output,
/// or per token.
enum class TaskKind : std::uint32_t { classification = 0, segmentation = 1, language_model = 2 };

/// Accepts the long names and the task-suite aliases (blobs, shapes,
/// pattern_lm). Unknown names throw std::invalid_argument.
TaskKind parse_task_kind(std::string_view name);
std::string_view to_string(TaskKind kind);

}  // namespace spg

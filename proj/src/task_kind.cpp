#include "spg/task_kind.hpp"

#include <stdexcept>
#include <string>

namespace spg {

TaskKind parse_task_kind(std::string_view name) {
  if (name == "classification" || name == "blobs") return TaskKind::classification;
  if (name == "segmentation" || name == "shapes") return TaskKind::segmentation;
  if (name == "language_model" || name == "language-modeling" || name == "pattern_lm") return TaskKind::language_model;
  throw std::invalid_argument("unknown task kind '" + std::string(name) + "'");
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return "classification";
    case TaskKind::segmentation: return "segmentation";
    case TaskKind::language_model: return "language_model";
  }
  return "unknown";
}

}  // namespace spg

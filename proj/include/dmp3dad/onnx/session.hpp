#pragma once

#include <memory>
#include <vector>

#include "dmp3dad/onnx/model.hpp"

namespace dmp3dad::onnx {

/// Executes a parsed graph on the CPU. `run` is const and keeps all
/// intermediate state local, so one session may serve concurrent callers.
class Session {
 public:
  explicit Session(Model model);

  const Model& model() const { return model_; }

  /// Inputs bind positionally to the graph's non-initializer inputs.
  std::vector<Tensor> run(std::vector<Tensor> inputs) const;

  /// Throws ModelError naming any op the interpreter does not implement.
  void check_supported() const;

 private:
  struct Scope;
  void execute(const Graph& graph, Scope& scope,
               const std::vector<std::vector<std::string>>* release) const;

  Model model_;
  std::vector<std::vector<std::string>> release_after_;  ///< per node: values dead after it runs
};

bool is_supported_op(const std::string& op_type);

}  // namespace dmp3dad::onnx

#pragma once

// Test plumbing shared by the unit and acceptance binaries: run gradient
// checks over whole models by rebuilding them from the flat leaf list that
// grad_check hands back.

#include <string>
#include <vector>

#include "smae/sit.hpp"
#include "smae/ssl.hpp"

namespace smae::testing {

// Flat parameter tensors of a storage model, in for_each_param order.
template <typename M>
std::vector<tensor::Tensor<double>> param_tensors(M& model) {
  std::vector<tensor::Tensor<double>> out;
  for_each_param(model, "",
                 [&out](const std::string&, tensor::Tensor<double>& t) { out.push_back(t); });
  return out;
}

// Fill a Var-handled model (same topology) from leaves in visitation order.
template <typename VM>
void assign_vars(VM& mounted, const std::vector<tensor::Var<double>>& vars) {
  size_t i = 0;
  for_each_param(mounted, "", [&](const std::string&, tensor::Var<double>& v) {
    v = vars.at(i++);
  });
  if (i != vars.size()) throw std::logic_error("leaf count mismatch in assign_vars");
}

inline sit::SitP<tensor::Var<double>> sit_skeleton(const sit::SitConfig& cfg) {
  sit::SitP<tensor::Var<double>> m;
  m.encoder.blocks.resize(static_cast<size_t>(cfg.layers));
  return m;
}

inline ssl::SmaeP<tensor::Var<double>> smae_skeleton(const sit::SitConfig& cfg) {
  ssl::SmaeP<tensor::Var<double>> m;
  m.encoder.blocks.resize(static_cast<size_t>(cfg.layers));
  m.dec_blocks.resize(static_cast<size_t>(cfg.decoder_layers()));
  return m;
}

}  // namespace smae::testing

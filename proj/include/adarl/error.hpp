#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adarl {

enum class ErrorKind {
  dimension_mismatch,
  non_binary_entry,
  unknown_node,
  horizon_too_small,
  non_finite_state,
  empty_values,
  negative_sigma,
  stability_unreachable,
  singular_conditioning_set,
  degenerate_rho,
  insufficient_samples,
  fewer_than_two_domains,
  all_ties,
  length_mismatch,
  non_scalar_loss,
  shape_mismatch,
  misaligned_batch,
  nan_loss,
  empty_dataset,
  empty_rollouts,
  untrained_model,
  no_source_domains,
  invalid_delta,
  invalid_sample_count,
  too_few_domains,
  nonpositive_std,
  invalid_argument,
  parse_error,
  io_error,
  config_error,
  hash_mismatch,
  insufficient_seeds,
  stage_failure,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::non_binary_entry: return "non-binary-entry";
    case ErrorKind::unknown_node: return "unknown-node";
    case ErrorKind::horizon_too_small: return "horizon-too-small";
    case ErrorKind::non_finite_state: return "non-finite-state";
    case ErrorKind::empty_values: return "empty-values";
    case ErrorKind::negative_sigma: return "negative-sigma";
    case ErrorKind::stability_unreachable: return "stability-unreachable";
    case ErrorKind::singular_conditioning_set: return "singular-conditioning-set";
    case ErrorKind::degenerate_rho: return "degenerate-rho";
    case ErrorKind::insufficient_samples: return "insufficient-samples";
    case ErrorKind::fewer_than_two_domains: return "fewer-than-two-domains";
    case ErrorKind::all_ties: return "all-ties";
    case ErrorKind::length_mismatch: return "length-mismatch";
    case ErrorKind::non_scalar_loss: return "non-scalar-loss";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::misaligned_batch: return "misaligned-batch";
    case ErrorKind::nan_loss: return "nan-loss";
    case ErrorKind::empty_dataset: return "empty-dataset";
    case ErrorKind::empty_rollouts: return "empty-rollouts";
    case ErrorKind::untrained_model: return "untrained-model";
    case ErrorKind::no_source_domains: return "no-source-domains";
    case ErrorKind::invalid_delta: return "invalid-delta";
    case ErrorKind::invalid_sample_count: return "invalid-sample-count";
    case ErrorKind::too_few_domains: return "too-few-domains";
    case ErrorKind::nonpositive_std: return "nonpositive-std";
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::parse_error: return "parse-error";
    case ErrorKind::io_error: return "io-error";
    case ErrorKind::config_error: return "config-error";
    case ErrorKind::hash_mismatch: return "hash-mismatch";
    case ErrorKind::insufficient_seeds: return "insufficient-seeds";
    case ErrorKind::stage_failure: return "stage-failure";
  }
  return "unknown";
}

}  // namespace adarl

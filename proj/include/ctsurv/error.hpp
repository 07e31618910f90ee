#ifndef CTSURV_ERROR_HPP
#define CTSURV_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctsurv {

/// Error categories raised by the toolkit. Tests match on these rather than
/// on message text.
enum class Errc {
  io,
  parse,
  duplicate_id,
  non_numeric,
  empty_table,
  missing_column,
  domain,
  size_mismatch,
  unsupported_dtype,
  empty_intersection,
  grid_mismatch,
  empty_mask,
  reference_batch_absent,
  small_batch,
  zero_variance,
  unseen_batch,
  name_mismatch,
  missing_values,
  entirely_missing,
  too_few_per_stratum,
  out_of_range,
  no_events,
  non_finite,
  constant_column,
  degenerate_fold,
  no_comparable_pairs,
  single_class,
  length_mismatch,
  overlap,
  unachievable_censoring,
  no_cases_or_controls,
  zero_censoring_survival,
  too_many_degenerate,
  invalid_config,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::io: return "io";
    case Errc::parse: return "parse";
    case Errc::duplicate_id: return "duplicate_id";
    case Errc::non_numeric: return "non_numeric";
    case Errc::empty_table: return "empty_table";
    case Errc::missing_column: return "missing_column";
    case Errc::domain: return "domain";
    case Errc::size_mismatch: return "size_mismatch";
    case Errc::unsupported_dtype: return "unsupported_dtype";
    case Errc::empty_intersection: return "empty_intersection";
    case Errc::grid_mismatch: return "grid_mismatch";
    case Errc::empty_mask: return "empty_mask";
    case Errc::reference_batch_absent: return "reference_batch_absent";
    case Errc::small_batch: return "small_batch";
    case Errc::zero_variance: return "zero_variance";
    case Errc::unseen_batch: return "unseen_batch";
    case Errc::name_mismatch: return "name_mismatch";
    case Errc::missing_values: return "missing_values";
    case Errc::entirely_missing: return "entirely_missing";
    case Errc::too_few_per_stratum: return "too_few_per_stratum";
    case Errc::out_of_range: return "out_of_range";
    case Errc::no_events: return "no_events";
    case Errc::non_finite: return "non_finite";
    case Errc::constant_column: return "constant_column";
    case Errc::degenerate_fold: return "degenerate_fold";
    case Errc::no_comparable_pairs: return "no_comparable_pairs";
    case Errc::single_class: return "single_class";
    case Errc::length_mismatch: return "length_mismatch";
    case Errc::overlap: return "overlap";
    case Errc::unachievable_censoring: return "unachievable_censoring";
    case Errc::no_cases_or_controls: return "no_cases_or_controls";
    case Errc::zero_censoring_survival: return "zero_censoring_survival";
    case Errc::too_many_degenerate: return "too_many_degenerate";
    case Errc::invalid_config: return "invalid_config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ctsurv

#endif  // CTSURV_ERROR_HPP

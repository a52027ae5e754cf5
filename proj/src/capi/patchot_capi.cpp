// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "patchot/patchot.h"

#include <exception>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include <json.hpp>

#include "config.hpp"
#include "errors.hpp"
#include "runner.hpp"
#include "set_repr.hpp"
#include "ukd.hpp"

using nlohmann::json;

struct pot_run {
  json doc = json::object();
  std::string config_text;
  std::optional<std::string> report_text;
};

namespace {

thread_local std::string last_error;

pot_status fail(pot_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename F>
pot_status guarded(F&& body) {
  try {
    last_error.clear();
    body();
    return POT_OK;
  } catch (const patchot::Error& e) {
    return fail(static_cast<pot_status>(static_cast<int>(e.code())), e.what());
  } catch (const json::exception& e) {
    return fail(POT_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(POT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(POT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(POT_ERR_INTERNAL, "unknown error");
  }
}

#define POT_REQUIRE(cond, msg) \
  if (!(cond)) return fail(POT_ERR_INVALID_ARGUMENT, msg)

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

patchot::Matrix matrix(const double* data, size_t rows, size_t cols) {
  return Eigen::Map<const RowMatrix>(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

patchot::Vector vector(const double* data, size_t n) {
  return Eigen::Map<const patchot::Vector>(data, static_cast<Eigen::Index>(n));
}

void store(const patchot::Matrix& m, double* out) {
  Eigen::Map<RowMatrix>(out, m.rows(), m.cols()) = m;
}

}  // namespace

extern "C" {

const char* pot_version(void) { return PATCHOT_VERSION; }

const char* pot_last_error(void) { return last_error.c_str(); }

const char* pot_status_name(pot_status status) {
  switch (status) {
    case POT_OK: return "ok";
    case POT_ERR_INVALID_ARGUMENT: return "invalid argument";
    case POT_ERR_CONFIG: return "config error";
    case POT_ERR_DIVERGENCE: return "numeric divergence";
    case POT_ERR_IO: return "I/O failure";
    case POT_ERR_VERSION: return "version mismatch";
    case POT_ERR_NON_CONVERGENCE: return "solver did not converge";
    case POT_ERR_DEGENERATE: return "degenerate input";
    case POT_ERR_CHECK_FAILED: return "check failed";
    case POT_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

pot_status pot_run_create(const char* config_json, pot_run** out) {
  POT_REQUIRE(out != nullptr, "out must not be null");
  *out = nullptr;
  return guarded([&] {
    auto run = std::make_unique<pot_run>();
    if (config_json != nullptr && *config_json != '\0') {
      try {
        run->doc = json::parse(config_json);
      } catch (const json::parse_error& e) {
        throw patchot::ConfigError("config", std::string("not valid JSON: ") + e.what());
      }
      if (!run->doc.is_object()) throw patchot::ConfigError("config", "expected a JSON object");
    }
    *out = run.release();
  });
}

pot_status pot_run_create_from_file(const char* path, pot_run** out) {
  POT_REQUIRE(out != nullptr && path != nullptr, "path and out must not be null");
  *out = nullptr;
  return guarded([&] {
    auto run = std::make_unique<pot_run>();
    run->doc = patchot::read_json_file(path);
    if (!run->doc.is_object()) throw patchot::ConfigError("config", std::string(path) + " is not a JSON object");
    *out = run.release();
  });
}

void pot_run_destroy(pot_run* run) { delete run; }

pot_status pot_run_set(pot_run* run, const char* dotted_key, const char* value) {
  POT_REQUIRE(run != nullptr && dotted_key != nullptr && value != nullptr, "null argument");
  return guarded([&] {
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::parse_error&) {
      parsed = std::string(value);
    }
    patchot::apply_override(run->doc, dotted_key, parsed);
  });
}

pot_status pot_run_execute(pot_run* run) {
  POT_REQUIRE(run != nullptr, "run must not be null");
  return guarded([&] {
    run->report_text.reset();
    const patchot::RunConfig config = patchot::config_from_json(run->doc);
    run->config_text = patchot::config_to_json(config).dump(2);
    run->report_text = patchot::run(config).to_json().dump(2);
  });
}

pot_status pot_run_config_json(pot_run* run, const char** out) {
  POT_REQUIRE(run != nullptr && out != nullptr, "null argument");
  return guarded([&] {
    run->config_text = patchot::config_to_json(patchot::config_from_json(run->doc)).dump(2);
    *out = run->config_text.c_str();
  });
}

pot_status pot_run_report_json(pot_run* run, const char** out) {
  POT_REQUIRE(run != nullptr && out != nullptr, "null argument");
  if (!run->report_text) return fail(POT_ERR_INVALID_ARGUMENT, "run has not been executed successfully");
  *out = run->report_text->c_str();
  return POT_OK;
}

pot_status pot_sinkhorn(size_t n, size_t m, const double* r, const double* c, const double* cost,
                        double epsilon, double tolerance, int max_iterations, int log_domain,
                        double* plan_out, int* iterations_out) {
  POT_REQUIRE(n > 0 && m > 0, "sizes must be positive");
  POT_REQUIRE(r && c && cost && plan_out, "null array");
  return guarded([&] {
    patchot::SinkhornConfig cfg;
    cfg.epsilon = epsilon;
    cfg.tolerance = tolerance;
    cfg.max_iterations = max_iterations;
    cfg.log_domain = log_domain != 0;
    const patchot::TransportPlan plan =
        patchot::sinkhorn_solve(vector(r, n), vector(c, m), matrix(cost, n, m), cfg);
    store(plan.entries, plan_out);
    if (iterations_out != nullptr) *iterations_out = plan.iterations;
  });
}

pot_status pot_emd(size_t n, size_t m, const double* r, const double* c, const double* cost,
                   double* plan_out, double* cost_out) {
  POT_REQUIRE(n > 0 && m > 0, "sizes must be positive");
  POT_REQUIRE(r && c && cost, "null array");
  return guarded([&] {
    const patchot::Matrix mcost = matrix(cost, n, m);
    const patchot::TransportPlan plan = patchot::exact_emd_solve(vector(r, n), vector(c, m), mcost);
    if (plan_out != nullptr) store(plan.entries, plan_out);
    if (cost_out != nullptr) *cost_out = patchot::transport_cost(plan.entries, mcost);
  });
}

pot_status pot_kl(size_t n, const double* p, const double* q, double* out) {
  POT_REQUIRE(n > 0 && p && q && out, "null or empty argument");
  return guarded([&] { *out = patchot::kl(vector(p, n), vector(q, n)); });
}

pot_status pot_decomposed_kl(size_t classes, const double* teacher_logits,
                             const double* student_logits, double* out) {
  POT_REQUIRE(classes >= 2 && teacher_logits && student_logits && out, "invalid argument");
  return guarded([&] {
    *out = patchot::decomposed_kl(vector(teacher_logits, classes), vector(student_logits, classes));
  });
}

pot_status pot_ukd_div(size_t classes, const double* teacher_logits, const double* student_logits,
                       double* out) {
  POT_REQUIRE(classes >= 2 && teacher_logits && student_logits && out, "invalid argument");
  return guarded([&] {
    *out = patchot::ukd_div(vector(teacher_logits, classes), vector(student_logits, classes));
  });
}

pot_status pot_adaptive_score(size_t n, size_t d, const double* u, const double* v, double epsilon,
                              double* out) {
  POT_REQUIRE(n > 0 && d > 0 && u && v && out, "invalid argument");
  return guarded([&] {
    patchot::SinkhornConfig cfg;
    cfg.max_iterations = 100000;
    *out = patchot::adaptive_score(patchot::LocalFeatureSet(matrix(u, n, d)),
                                   patchot::LocalFeatureSet(matrix(v, n, d)), epsilon, cfg);
  });
}

}  // extern "C"

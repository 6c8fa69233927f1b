#include "codex_ensemble/codex_ensemble.h"

#include <exception>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pipeline/pipeline.hpp"
#include "util/errors.hpp"

struct cdx_pipeline {
  std::unique_ptr<codex::pipeline::Pipeline> impl;
};

namespace {

thread_local std::string g_error_message;
thread_local std::string g_error_class;

cdx_status fail(const std::exception& e) {
  g_error_message = e.what();
  if (const auto* err = dynamic_cast<const codex::Error*>(&e)) {
    g_error_class = codex::err_name(err->code());
  } else {
    g_error_class = "Internal";
  }
  return CDX_ERROR;
}

std::vector<std::string> split_list(const char* csv) {
  std::vector<std::string> out;
  if (csv == nullptr) return out;
  std::string item;
  for (const char* c = csv; *c != '\0'; ++c) {
    if (*c == ',') {
      if (!item.empty()) out.push_back(std::move(item));
      item.clear();
    } else if (*c != ' ') {
      item += *c;
    }
  }
  if (!item.empty()) out.push_back(std::move(item));
  return out;
}

template <typename Fn>
cdx_status guarded(cdx_pipeline* p, Fn&& fn) {
  if (p == nullptr || p->impl == nullptr) return CDX_BAD_ARGUMENT;
  try {
    fn(*p->impl);
    return CDX_OK;
  } catch (const std::exception& e) {
    return fail(e);
  }
}

}  // namespace

extern "C" {

const char* cdx_version(void) { return "1.0.0"; }

cdx_status cdx_pipeline_open(const char* config_path, cdx_pipeline** out) {
  if (out == nullptr) return CDX_BAD_ARGUMENT;
  *out = nullptr;
  if (config_path == nullptr) return CDX_BAD_ARGUMENT;
  try {
    auto config = codex::pipeline::load_config_file(config_path);
    auto handle = std::make_unique<cdx_pipeline>();
    handle->impl =
        std::make_unique<codex::pipeline::Pipeline>(std::move(config));
    *out = handle.release();
    return CDX_OK;
  } catch (const std::exception& e) {
    return fail(e);
  }
}

void cdx_pipeline_close(cdx_pipeline* p) { delete p; }

cdx_status cdx_run_synth(cdx_pipeline* p) {
  return guarded(p, [](codex::pipeline::Pipeline& pl) { pl.run_synth(); });
}

cdx_status cdx_run_prepare(cdx_pipeline* p) {
  return guarded(p, [](codex::pipeline::Pipeline& pl) { pl.run_prepare(); });
}

cdx_status cdx_run_train(cdx_pipeline* p, const char* parts) {
  return guarded(p, [parts](codex::pipeline::Pipeline& pl) {
    const auto list = split_list(parts);
    pl.run_train(std::set<std::string>(list.begin(), list.end()));
  });
}

cdx_status cdx_run_evaluate(cdx_pipeline* p, const char* subsets) {
  return guarded(p, [subsets](codex::pipeline::Pipeline& pl) {
    pl.run_evaluate(split_list(subsets));
  });
}

cdx_status cdx_run_scope_report(cdx_pipeline* p) {
  return guarded(p,
                 [](codex::pipeline::Pipeline& pl) { pl.run_scope_report(); });
}

cdx_status cdx_run_predict(cdx_pipeline* p, const char* input_path,
                           const char* output_path) {
  if (input_path == nullptr || output_path == nullptr) {
    return CDX_BAD_ARGUMENT;
  }
  return guarded(p, [&](codex::pipeline::Pipeline& pl) {
    pl.run_predict(input_path, output_path);
  });
}

const char* cdx_last_error(void) { return g_error_message.c_str(); }

const char* cdx_last_error_class(void) { return g_error_class.c_str(); }

}  // extern "C"

#include "cgfusion/cgfusion.h"

#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <new>
#include <string>

#include "cgfusion/errors.hpp"
#include "cgfusion/image_io.hpp"
#include "cgfusion/pipeline.hpp"

struct cgf_config {
  cgf::RunConfig value;
};

struct cgf_image {
  cgf::Tensor gray;
};

struct cgf_model {
  cgf::Network net;
};

namespace {

thread_local std::string last_error;

cgf_status fail(cgf_status code, const std::string& msg) {
  last_error = msg;
  return code;
}

// Maps the library's exception types onto status codes.
template <typename Fn>
cgf_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    fn();
    return CGF_OK;
  } catch (const cgf::ConfigError& e) {
    return fail(CGF_ERR_CONFIG, e.what());
  } catch (const cgf::StateError& e) {
    return fail(CGF_ERR_STATE, e.what());
  } catch (const cgf::IoError& e) {
    return fail(CGF_ERR_IO, e.what());
  } catch (const cgf::DataError& e) {
    return fail(CGF_ERR_DATA, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(CGF_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(CGF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(CGF_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(CGF_ERR_INTERNAL, "unknown error");
  }
}

cgf::LogSink sink(cgf_log_fn log, void* user) {
  if (!log) return {};
  return [log, user](const std::string& line) { log(line.c_str(), user); };
}

const std::vector<std::string>& defaults() {
  static const std::vector<std::string> values = [] {
    std::vector<std::string> v;
    const cgf::RunConfig d;
    for (const auto& k : cgf::config_keys()) v.push_back(k.get(d));
    return v;
  }();
  return values;
}

template <typename Cmd>
cgf_status run(const cgf_config* cfg, Cmd&& cmd) {
  if (!cfg) return fail(CGF_ERR_INPUT, "config is null");
  return guarded([&] { cmd(cfg->value); });
}

}  // namespace

extern "C" {

const char* cgf_last_error(void) { return last_error.c_str(); }

const char* cgf_version(void) { return "0.1.0"; }

cgf_status cgf_config_create(cgf_config** out) {
  if (!out) return fail(CGF_ERR_INPUT, "out is null");
  return guarded([&] { *out = new cgf_config{}; });
}

void cgf_config_destroy(cgf_config* cfg) { delete cfg; }

cgf_status cgf_config_set(cgf_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(CGF_ERR_INPUT, "null argument");
  return guarded([&] { cgf::set_config_value(cfg->value, key, value); });
}

cgf_status cgf_config_get(const cgf_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  if (!cfg || !key) return fail(CGF_ERR_INPUT, "null argument");
  return guarded([&] {
    const std::string v = cgf::get_config_value(cfg->value, key);
    if (needed) *needed = v.size() + 1;
    if (buf && cap > v.size()) std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

cgf_status cgf_config_load_file(cgf_config* cfg, const char* path) {
  if (!cfg || !path) return fail(CGF_ERR_INPUT, "null argument");
  return guarded([&] { cgf::load_config_file(cfg->value, path); });
}

size_t cgf_config_key_count(void) { return cgf::config_keys().size(); }

const char* cgf_config_key_name(size_t index) {
  return index < cgf::config_keys().size() ? cgf::config_keys()[index].name.c_str() : nullptr;
}

const char* cgf_config_key_help(size_t index) {
  return index < cgf::config_keys().size() ? cgf::config_keys()[index].help.c_str() : nullptr;
}

const char* cgf_config_key_default(size_t index) {
  return index < defaults().size() ? defaults()[index].c_str() : nullptr;
}

cgf_status cgf_gen_data(const cgf_config* cfg, cgf_log_fn log, void* user) {
  return run(cfg, [&](const cgf::RunConfig& c) { cgf::cmd_gen_data(c, sink(log, user)); });
}

cgf_status cgf_train(const cgf_config* cfg, cgf_log_fn log, void* user) {
  return run(cfg, [&](const cgf::RunConfig& c) { cgf::cmd_train(c, sink(log, user)); });
}

cgf_status cgf_infer(const cgf_config* cfg, cgf_log_fn log, void* user) {
  return run(cfg, [&](const cgf::RunConfig& c) { cgf::cmd_infer(c, sink(log, user)); });
}

cgf_status cgf_evaluate(const cgf_config* cfg, cgf_log_fn log, void* user) {
  return run(cfg, [&](const cgf::RunConfig& c) { cgf::cmd_evaluate(c, sink(log, user)); });
}

cgf_status cgf_ablate(const cgf_config* cfg, cgf_log_fn log, void* user) {
  return run(cfg, [&](const cgf::RunConfig& c) { cgf::cmd_ablate(c, sink(log, user)); });
}

cgf_status cgf_image_create(int height, int width, const double* gray, cgf_image** out) {
  if (!out || !gray || height < 1 || width < 1) return fail(CGF_ERR_INPUT, "invalid image arguments");
  return guarded([&] {
    const std::size_t n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    *out = new cgf_image{cgf::Tensor({height, width}, std::vector<double>(gray, gray + n))};
  });
}

cgf_status cgf_image_load(const char* path, cgf_image** out) {
  if (!path || !out) return fail(CGF_ERR_INPUT, "null argument");
  return guarded([&] { *out = new cgf_image{cgf::io::read_gray(path)}; });
}

void cgf_image_destroy(cgf_image* img) { delete img; }

int cgf_image_height(const cgf_image* img) { return img ? img->gray.height() : 0; }

int cgf_image_width(const cgf_image* img) { return img ? img->gray.width() : 0; }

const double* cgf_image_data(const cgf_image* img) { return img ? img->gray.raw() : nullptr; }

cgf_status cgf_model_load(const char* checkpoint, cgf_model** out) {
  if (!checkpoint || !out) return fail(CGF_ERR_INPUT, "null argument");
  return guarded([&] { *out = new cgf_model{cgf::Network::load(checkpoint)}; });
}

void cgf_model_destroy(cgf_model* model) { delete model; }

cgf_status cgf_model_classify(cgf_model* model, const cgf_image* img, double logits[2], int* predicted) {
  if (!model || !img) return fail(CGF_ERR_INPUT, "null argument");
  return guarded([&] {
    const cgf::ClassScores s = cgf::classify(model->net, cgf::network_input(img->gray));
    if (logits) {
      logits[0] = s.logits[0];
      logits[1] = s.logits[1];
    }
    if (predicted) *predicted = s.predicted();
  });
}

cgf_status cgf_model_explain(cgf_model* model, const cgf_image* img, const cgf_config* cfg, cgf_image** heatmap,
                             cgf_image** mask, int* regions) {
  if (!model || !img || !cfg) return fail(CGF_ERR_INPUT, "null argument");
  return guarded([&] {
    const cgf::RunConfig& c = cfg->value;
    c.threshold.validate();
    const cgf::Explanation ex = cgf::explain(model->net, img->gray, c.target, c.fusion);
    const cgf::Tensor heat = cgf::method_heatmap(ex, c.method, c.fusion);
    const cgf::SegmentationResult seg = cgf::segment_heatmap(heat, c.threshold);
    if (heatmap) *heatmap = new cgf_image{heat};
    if (mask) *mask = new cgf_image{seg.mask};
    if (regions) *regions = static_cast<int>(seg.regions.size());
  });
}

cgf_status cgf_sauvola(const double* map, int height, int width, int window, double k, double r,
                       unsigned char* mask_out) {
  if (!map || !mask_out || height < 1 || width < 1) return fail(CGF_ERR_INPUT, "invalid map arguments");
  return guarded([&] {
    const std::size_t n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    cgf::ThresholdConfig tc;
    tc.window = window;
    tc.k = k;
    tc.r = r;
    const cgf::Tensor m = cgf::sauvola_threshold(cgf::Tensor({height, width}, std::vector<double>(map, map + n)), tc);
    for (std::size_t i = 0; i < n; ++i) mask_out[i] = m[i] > 0.5 ? 1 : 0;
  });
}

cgf_status cgf_pixel_metrics(const unsigned char* pred, const unsigned char* gt, size_t n, double out[4]) {
  if (!pred || !gt || !out) return fail(CGF_ERR_INPUT, "null argument");
  return guarded([&] {
    cgf::Tensor p({static_cast<int>(n)}), g({static_cast<int>(n)});
    for (size_t i = 0; i < n; ++i) {
      p[i] = pred[i] ? 1.0 : 0.0;
      g[i] = gt[i] ? 1.0 : 0.0;
    }
    const cgf::PixelMetrics m = cgf::pixel_metrics(p, g);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out[0] = m.precision.value_or(nan);
    out[1] = m.recall.value_or(nan);
    out[2] = m.f1.value_or(nan);
    out[3] = m.iou.value_or(nan);
  });
}

}  // extern "C"

// Exercises the shared library through its C header only.
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "cgfusion/cgfusion.h"

TEST(CApi, ConfigSetGetAndErrors) {
  cgf_config* cfg = nullptr;
  ASSERT_EQ(cgf_config_create(&cfg), CGF_OK);
  EXPECT_EQ(cgf_config_set(cfg, "threshold.k", "0.3"), CGF_OK);
  size_t needed = 0;
  EXPECT_EQ(cgf_config_get(cfg, "threshold.k", nullptr, 0, &needed), CGF_OK);
  EXPECT_EQ(needed, 4u);
  std::vector<char> buf(needed);
  EXPECT_EQ(cgf_config_get(cfg, "threshold.k", buf.data(), buf.size(), nullptr), CGF_OK);
  EXPECT_STREQ(buf.data(), "0.3");

  EXPECT_EQ(cgf_config_set(cfg, "bogus", "1"), CGF_ERR_CONFIG);
  EXPECT_NE(std::string(cgf_last_error()).find("bogus"), std::string::npos);
  EXPECT_EQ(cgf_config_set(cfg, nullptr, "1"), CGF_ERR_INPUT);
  EXPECT_EQ(cgf_config_load_file(cfg, "/nonexistent.cfg"), CGF_ERR_IO);
  EXPECT_EQ(cgf_config_set(cfg, "seed", "3"), CGF_OK);
  EXPECT_STREQ(cgf_last_error(), "");
  cgf_config_destroy(cfg);
}

TEST(CApi, KeyTableIsComplete) {
  const size_t n = cgf_config_key_count();
  EXPECT_GT(n, 40u);
  bool seen_method = false;
  for (size_t i = 0; i < n; ++i) {
    ASSERT_NE(cgf_config_key_name(i), nullptr);
    ASSERT_NE(cgf_config_key_help(i), nullptr);
    ASSERT_NE(cgf_config_key_default(i), nullptr);
    if (std::strcmp(cgf_config_key_name(i), "method") == 0) {
      seen_method = true;
      EXPECT_STREQ(cgf_config_key_default(i), "cgfusion");
    }
  }
  EXPECT_TRUE(seen_method);
  EXPECT_EQ(cgf_config_key_name(n), nullptr);
}

TEST(CApi, SauvolaHandFixture) {
  const double map[9] = {196, 4, 100, 196, 4, 100, 100, 100, 100};
  unsigned char mask[9];
  ASSERT_EQ(cgf_sauvola(map, 3, 3, 3, 0.5, 128.0, mask), CGF_OK);
  EXPECT_EQ(mask[4], 0);  // 4 < 75
  EXPECT_EQ(cgf_sauvola(map, 3, 3, 4, 0.5, 128.0, mask), CGF_ERR_CONFIG);
  EXPECT_EQ(cgf_sauvola(nullptr, 3, 3, 3, 0.5, 128.0, mask), CGF_ERR_INPUT);
}

TEST(CApi, PixelMetricsWithUndefinedRates) {
  const unsigned char pred[4] = {1, 1, 0, 0}, gt[4] = {1, 0, 1, 0};
  double out[4];
  ASSERT_EQ(cgf_pixel_metrics(pred, gt, 4, out), CGF_OK);
  EXPECT_EQ(out[0], 0.5);
  EXPECT_EQ(out[1], 0.5);
  EXPECT_EQ(out[2], 0.5);
  EXPECT_NEAR(out[3], 1.0 / 3.0, 1e-15);
  const unsigned char none[4] = {0, 0, 0, 0};
  ASSERT_EQ(cgf_pixel_metrics(none, none, 4, out), CGF_OK);
  for (double v : out) EXPECT_TRUE(std::isnan(v));
}

TEST(CApi, ImagesAndMissingFiles) {
  std::vector<double> px(6, 7.0);
  cgf_image* img = nullptr;
  ASSERT_EQ(cgf_image_create(2, 3, px.data(), &img), CGF_OK);
  EXPECT_EQ(cgf_image_height(img), 2);
  EXPECT_EQ(cgf_image_width(img), 3);
  EXPECT_EQ(cgf_image_data(img)[5], 7.0);
  cgf_image_destroy(img);
  EXPECT_EQ(cgf_image_create(0, 3, px.data(), &img), CGF_ERR_INPUT);
  EXPECT_EQ(cgf_image_load("/nonexistent.png", &img), CGF_ERR_IO);
  cgf_model* model = nullptr;
  EXPECT_EQ(cgf_model_load("/nonexistent.ckpt", &model), CGF_ERR_IO);
}

TEST(CApi, CommandsReportMissingInputs) {
  cgf_config* cfg = nullptr;
  ASSERT_EQ(cgf_config_create(&cfg), CGF_OK);
  cgf_config_set(cfg, "run.root", "/tmp/cgfusion_tests/capi_runs");
  cgf_config_set(cfg, "data.dir", "/nonexistent/data");
  EXPECT_EQ(cgf_train(cfg, nullptr, nullptr), CGF_ERR_IO);
  EXPECT_EQ(cgf_evaluate(cfg, nullptr, nullptr), CGF_ERR_CONFIG);
  EXPECT_EQ(cgf_train(nullptr, nullptr, nullptr), CGF_ERR_INPUT);
  cgf_config_destroy(cfg);
}

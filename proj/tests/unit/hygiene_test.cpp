/*
 * Copyright 2026 The MROSS Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include "support/invariants.hpp"

namespace {

class Hygiene : public ::testing::TestWithParam<int> {
 protected:
  const mross::LossSpec& loss() const { return mross_test::all_losses()[GetParam()]; }
};

TEST_P(Hygiene, CombinedJacobianMatchesFiniteDifferences) {
  const auto c = mross_test::check_combined_jacobian(loss());
  EXPECT_TRUE(c.ok) << c.detail;
}

TEST_P(Hygiene, StreamingSummariesMatchBatchRecomputation) {
  const auto c = mross_test::check_streaming_summaries(loss());
  EXPECT_TRUE(c.ok) << c.detail;
}

INSTANTIATE_TEST_SUITE_P(AllLosses, Hygiene, ::testing::Values(0, 1, 2));

TEST(Hygiene, FullSuiteIsClean) {
  for (const auto& nc : mross_test::hygiene_suite()) EXPECT_TRUE(nc.result.ok) << nc.name << ": " << nc.result.detail;
}

}  // namespace

#include <gtest/gtest.h>

#include <memory>

#include "branchgrpo/config.hpp"
#include "branchgrpo/trainer.hpp"

namespace branchgrpo {
namespace {

class Pretrained : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = std::make_unique<RunConfig>(parse_config(""));
    policy_ = std::make_unique<PolicyParams>(
        PolicyParams::init(MlpShape::for_dim(config_->trainer.world.dim, config_->hidden), config_->pretrain.seed));
    pretrain_flow_matching(config_->trainer.world, *policy_, config_->pretrain);
  }
  static void TearDownTestSuite() {
    config_.reset();
    policy_.reset();
  }
  static std::unique_ptr<RunConfig> config_;
  static std::unique_ptr<PolicyParams> policy_;
};

std::unique_ptr<RunConfig> Pretrained::config_;
std::unique_ptr<PolicyParams> Pretrained::policy_;

TEST_F(Pretrained, OdeSamplesLandNearModes) {
  const auto report = evaluate_policy(config_->trainer, policy_->values, policy_->shape, 1024, 7, true);
  EXPECT_GE(report.within_three_scales, 0.95);
}

TEST_F(Pretrained, SymmetricModesAreBalanced) {
  const auto report = evaluate_policy(config_->trainer, policy_->values, policy_->shape, 4096, 8, true);
  EXPECT_GE(report.target_mode_fraction, 0.48);
  EXPECT_LE(report.target_mode_fraction, 0.52);
}

TEST_F(Pretrained, StochasticSamplerKeepsModes) {
  const auto report = evaluate_policy(config_->trainer, policy_->values, policy_->shape, 1024, 9, false);
  EXPECT_GE(report.within_three_scales, 0.9);
}

}  // namespace
}  // namespace branchgrpo

#pragma once

#include <rclut/checkpoint.hpp>
#include <rclut/config.hpp>
#include <rclut/conv_block.hpp>
#include <rclut/error.hpp>
#include <rclut/finetune.hpp>
#include <rclut/imagecore.hpp>
#include <rclut/lutengine.hpp>
#include <rclut/lutpack.hpp>
#include <rclut/metrics.hpp>
#include <rclut/network.hpp>
#include <rclut/plane.hpp>
#include <rclut/random.hpp>
#include <rclut/rc_module.hpp>
#include <rclut/synthetic.hpp>
#include <rclut/trainer.hpp>

#pragma once

#define TOPICFORGE_VERSION "0.1.0"

#pragma once

/// Library version, kept in sync with the CMake project version.
#define DIFFQP_VERSION_MAJOR 0
#define DIFFQP_VERSION_MINOR 1
#define DIFFQP_VERSION_PATCH 0
#define DIFFQP_VERSION_STRING "0.1.0"

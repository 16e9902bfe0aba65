// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return mvtf::cli::dispatch(argc, argv, std::cout, std::cerr); }

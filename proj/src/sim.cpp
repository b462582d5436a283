namespace fwerk {}

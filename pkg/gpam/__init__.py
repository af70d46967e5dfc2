# gpam package

# services package 